//! Brute-force convolution, sampling and pooling.

use instsearch_core::{BBox, ConvParams, Tensor3};

/// Output extent along one axis, or `None` when the kernel does not fit.
fn out_len(n: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    (n + 2 * pad >= span).then(|| (n + 2 * pad - span) / stride + 1)
}

fn at(t: &Tensor3, c: usize, y: i64, x: i64) -> f64 {
    if y < 0 || x < 0 || y >= t.height() as i64 || x >= t.width() as i64 {
        0.0
    } else {
        t.data()[(c * t.height() + y as usize) * t.width() + x as usize] as f64
    }
}

/// Dense convolution (cross-correlation), one output value at a time.
pub fn conv2d(input: &Tensor3, p: &ConvParams) -> Tensor3 {
    assert_eq!(input.channels(), p.in_channels(), "oracle: channel mismatch");
    let k = p.kernel();
    let oh = out_len(input.height(), k, p.stride, p.padding, p.dilation).expect("oracle: fits");
    let ow = out_len(input.width(), k, p.stride, p.padding, p.dilation).expect("oracle: fits");
    Tensor3::from_fn(p.out_channels(), oh, ow, |o, oy, ox| {
        let mut s = p.bias()[o] as f64;
        for ky in 0..k {
            for kx in 0..k {
                let y = (oy * p.stride + ky * p.dilation) as i64 - p.padding as i64;
                let x = (ox * p.stride + kx * p.dilation) as i64 - p.padding as i64;
                for i in 0..p.in_channels() {
                    s += p.weights()[((o * p.in_channels() + i) * k + ky) * k + kx] as f64 * at(input, i, y, x);
                }
            }
        }
        s as f32
    })
}

/// Copies filters `[start, end)` of `p` into a standalone dense layer.
fn filter_slice(p: &ConvParams, start: usize, end: usize) -> ConvParams {
    let per = p.in_channels() * p.kernel() * p.kernel();
    ConvParams::new(
        end - start,
        p.in_channels(),
        p.kernel(),
        p.weights()[start * per..end * per].to_vec(),
        p.bias()[start..end].to_vec(),
    )
    .unwrap()
    .with_stride(p.stride)
    .with_padding(p.padding)
    .with_dilation(p.dilation)
}

/// Grouped convolution as `groups` independent dense convolutions over
/// channel slices, concatenated.
pub fn grouped_conv2d(input: &Tensor3, p: &ConvParams, groups: usize) -> Tensor3 {
    let in_per = input.channels() / groups;
    let out_per = p.out_channels() / groups;
    let parts: Vec<Tensor3> = (0..groups)
        .map(|g| {
            let x = input.slice_channels(g * in_per, (g + 1) * in_per).unwrap();
            conv2d(&x, &filter_slice(p, g * out_per, (g + 1) * out_per))
        })
        .collect();
    Tensor3::concat_channels(&parts).unwrap()
}

/// Bilinear interpolation summing the four surrounding pixels that lie inside the map.
pub fn bilinear(t: &Tensor3, c: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let corners = [
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x0 + 1.0, (1.0 - fy) * fx),
        (y0 + 1.0, x0, fy * (1.0 - fx)),
        (y0 + 1.0, x0 + 1.0, fy * fx),
    ];
    corners.iter().map(|&(cy, cx, w)| w * at(t, c, cy as i64, cx as i64)).sum()
}

/// Deformable convolution evaluated tap by tap. Offsets come from `offset_conv`
/// applied to the input: channel `2k` is Δy and `2k + 1` is Δx for tap `k = ky·K + kx`.
pub fn deformable_conv2d(input: &Tensor3, conv: &ConvParams, offset_conv: &ConvParams, groups: usize) -> Tensor3 {
    let offsets = conv2d(input, offset_conv);
    let k = conv.kernel();
    let in_per = input.channels() / groups;
    let out_per = conv.out_channels() / groups;
    let (oh, ow) = (offsets.height(), offsets.width());
    Tensor3::from_fn(conv.out_channels(), oh, ow, |o, oy, ox| {
        let g = o / out_per;
        let mut s = conv.bias()[o] as f64;
        for ky in 0..k {
            for kx in 0..k {
                let tap = ky * k + kx;
                let dy = offsets.get(2 * tap, oy, ox) as f64;
                let dx = offsets.get(2 * tap + 1, oy, ox) as f64;
                let y = (oy * conv.stride + ky * conv.dilation) as f64 - conv.padding as f64 + dy;
                let x = (ox * conv.stride + kx * conv.dilation) as f64 - conv.padding as f64 + dx;
                for i in 0..in_per {
                    let w = conv.weights()[((o * in_per + i) * k + ky) * k + kx] as f64;
                    s += w * bilinear(input, g * in_per + i, x, y);
                }
            }
        }
        s as f32
    })
}

/// Whether integer cell `x` lies under `[lo, hi]` on an axis of `n` cells.
fn covered(x: usize, lo: f64, hi: f64, n: usize) -> bool {
    if lo == hi && lo.fract() == 0.0 {
        // A zero-width box on a grid line owns the cell to its right, or the last cell.
        return x == (lo as usize).min(n - 1);
    }
    (x as f64) + 1.0 > lo && (x as f64) < hi
}

/// Max over all cells that pass the coverage test, scanning the whole map.
/// `None` when no cell is covered.
pub fn roi_max_pool(maps: &Tensor3, roi: &BBox) -> Option<Vec<f32>> {
    let (w, h) = (maps.width(), maps.height());
    let cells: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| covered(x, roi.x_min, roi.x_max, w) && covered(y, roi.y_min, roi.y_max, h))
        .collect();
    if cells.is_empty() {
        return None;
    }
    Some(
        (0..maps.channels())
            .map(|c| cells.iter().map(|&(y, x)| maps.get(c, y, x)).fold(f32::NEG_INFINITY, f32::max))
            .collect(),
    )
}
