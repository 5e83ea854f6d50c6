//! Dense `C×H×W` feature-map container and the two numeric primitives every
//! kernel is built from: zero-padded cross-correlation and bilinear sampling.
//!
//! Storage is channel-major then row-major (`[c][y][x]`). Dot products inside
//! the convolutions accumulate in `f64` and round once on output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::shape(format!("{channels}x{height}x{width} overflows")))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} tensor needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    /// Builds a tensor by evaluating `f(c, y, x)` for every cell.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    /// Row-major plane of channel `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    /// Element-wise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor3) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, ..*self })
    }

    /// Copy of channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.channels {
            return Err(Error::shape(format!(
                "channel slice {start}..{end} of {} channels",
                self.channels
            )));
        }
        let n = self.height * self.width;
        Ok(Self {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        })
    }

    /// Stacks tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[Tensor3]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for part in parts {
            if (part.height, part.width) != (h, w) {
                return Err(Error::shape(format!(
                    "concat of {}x{} with {}x{}",
                    h, w, part.height, part.width
                )));
            }
            channels += part.channels;
            data.extend_from_slice(&part.data);
        }
        Ok(Self { channels, height: h, width: w, data })
    }
}

/// Filter bank for a 2-D convolution.
///
/// `weights` is laid out `[out][in][k][k]`, where `in` is the number of input
/// channels seen by each filter (the full input depth for a dense convolution,
/// the per-group depth for a grouped one).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {kernel}")));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::invalid("convolution needs at least one input and output channel"));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "weights [{out_channels}][{in_channels}][{kernel}][{kernel}] need {expected} values, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!(
                "bias needs {out_channels} values, got {}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution parameters".into()));
        }
        Ok(Self { out_channels, in_channels, kernel, weights, bias, stride: 1, padding: 0, dilation: 1 })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            kernel,
            vec![0.0; out_channels * in_channels * kernel * kernel],
            vec![0.0; out_channels],
        )
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Learnable values (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Stride, padding and dilation all equal.
    pub fn same_geometry(&self, other: &ConvParams) -> bool {
        self.kernel == other.kernel
            && self.stride == other.stride
            && self.padding == other.padding
            && self.dilation == other.dilation
    }

    /// Output spatial size `(H + 2·pad − dilation·(K−1) − 1)/stride + 1` for each axis.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid("stride and dilation must be positive"));
        }
        let span = self.dilation * (self.kernel - 1) + 1;
        let axis = |n: usize| {
            let padded = n + 2 * self.padding;
            if padded < span {
                None
            } else {
                Some((padded - span) / self.stride + 1)
            }
        };
        match (axis(height), axis(width)) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "{height}x{width} input too small for kernel {} (dilation {}, padding {})",
                self.kernel, self.dilation, self.padding
            ))),
        }
    }
}

/// Dense 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor3, params: &ConvParams) -> Result<Tensor3> {
    convolve(input, params, 1)
}

/// Shared implementation of dense and grouped convolution.
pub(crate) fn convolve(input: &Tensor3, params: &ConvParams, groups: usize) -> Result<Tensor3> {
    if groups == 0 {
        return Err(Error::invalid("groups must be positive"));
    }
    if input.channels() != params.in_channels() * groups {
        return Err(Error::shape(format!(
            "input has {} channels, filters expect {} x {} groups",
            input.channels(),
            params.in_channels(),
            groups
        )));
    }
    if params.out_channels() % groups != 0 {
        return Err(Error::shape(format!(
            "{} output channels not divisible into {groups} groups",
            params.out_channels()
        )));
    }
    input.ensure_finite("convolution input")?;

    let (h, w) = (input.height(), input.width());
    let (oh, ow) = params.output_size(h, w)?;
    let k = params.kernel();
    let (stride, pad, dil) = (params.stride, params.padding, params.dilation);
    let in_per_group = params.in_channels();
    let out_per_group = params.out_channels() / groups;

    let mut out = Vec::with_capacity(params.out_channels() * oh * ow);
    let mut acc = vec![0f64; oh * ow];
    for o in 0..params.out_channels() {
        let group = o / out_per_group;
        acc.fill(params.bias()[o] as f64);
        for i in 0..in_per_group {
            let plane = input.plane(group * in_per_group + i);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = params.weight(o, i, ky, kx) as f64;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky * dil) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                        for (ox, a) in acc_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx * dil) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *a += wv * row[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    let result = Tensor3::new(params.out_channels(), oh, ow, out)?;
    result.ensure_finite("convolution output")?;
    Ok(result)
}

/// Bilinearly interpolated value of channel `channel` at `(x, y)`.
///
/// Each of the (up to) four integer neighbours contributes
/// `pixel · (1−|x−xᵢ|) · (1−|y−yᵢ|)`; neighbours outside the map contribute zero.
pub fn bilinear_sample(input: &Tensor3, channel: usize, x: f32, y: f32) -> Result<f32> {
    if channel >= input.channels() {
        return Err(Error::Channel { index: channel, channels: input.channels() });
    }
    Ok(sample_plane(input.plane(channel), input.height(), input.width(), x as f64, y as f64) as f32)
}

#[inline]
pub(crate) fn sample_plane(plane: &[f32], height: usize, width: usize, x: f64, y: f64) -> f64 {
    if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let pixel = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= width as isize || yi >= height as isize {
            0.0
        } else {
            plane[yi as usize * width + xi as usize] as f64
        }
    };
    // Zero-weight neighbours are skipped so integer coordinates reproduce stored values exactly.
    let mut value = pixel(x0, y0) * (1.0 - fx) * (1.0 - fy);
    if fx > 0.0 {
        value += pixel(x0 + 1, y0) * fx * (1.0 - fy);
    }
    if fy > 0.0 {
        value += pixel(x0, y0 + 1) * (1.0 - fx) * fy;
        if fx > 0.0 {
            value += pixel(x0 + 1, y0 + 1) * fx * fy;
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_1x1(weight: f32) -> ConvParams {
        ConvParams::new(1, 1, 1, vec![weight], vec![0.0]).unwrap()
    }

    #[test]
    fn pointwise_scale() {
        let x = Tensor3::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &params_1x1(2.0)).unwrap();
        assert_eq!(y.shape(), (1, 3, 3));
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn padding_keeps_only_center_tap() {
        let x = Tensor3::new(1, 1, 1, vec![5.0]).unwrap();
        let p = ConvParams::new(1, 1, 3, vec![1.0; 9], vec![1.0]).unwrap().with_padding(1);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), (1, 1, 1));
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn stride_and_dilation_shapes() {
        let x = Tensor3::zeros(2, 9, 7);
        let p = ConvParams::zeros(3, 2, 3).unwrap().with_stride(2).with_padding(1);
        assert_eq!(conv2d(&x, &p).unwrap().shape(), (3, 5, 4));
        let p = ConvParams::zeros(3, 2, 3).unwrap().with_dilation(2);
        assert_eq!(conv2d(&x, &p).unwrap().shape(), (3, 5, 3));
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor3::zeros(2, 4, 4);
        assert!(matches!(conv2d(&x, &params_1x1(1.0)), Err(Error::Shape(_))));
        let p = ConvParams::zeros(1, 2, 5).unwrap();
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
        assert!(ConvParams::zeros(1, 1, 2).is_err());
        assert!(ConvParams::new(1, 1, 1, vec![1.0], vec![]).is_err());
    }

    #[test]
    fn rejects_non_finite_input() {
        let x = Tensor3::new(1, 1, 2, vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(conv2d(&x, &params_1x1(1.0)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bilinear_examples() {
        let t = Tensor3::from_fn(1, 5, 4, |_, y, x| (y * 10 + x) as f32);
        assert_eq!(bilinear_sample(&t, 0, 2.0, 3.0).unwrap(), 32.0);

        let ramp = Tensor3::new(1, 1, 2, vec![0.0, 10.0]).unwrap();
        assert_eq!(bilinear_sample(&ramp, 0, 0.5, 0.0).unwrap(), 5.0);
        assert_eq!(bilinear_sample(&ramp, 0, -1.0, -1.0).unwrap(), 0.0);
        assert!(matches!(bilinear_sample(&ramp, 1, 0.0, 0.0), Err(Error::Channel { .. })));
    }

    #[test]
    fn bilinear_fades_to_zero_past_border() {
        let t = Tensor3::new(1, 1, 1, vec![8.0]).unwrap();
        assert_eq!(bilinear_sample(&t, 0, 0.5, 0.0).unwrap(), 4.0);
        assert_eq!(bilinear_sample(&t, 0, -0.25, 0.0).unwrap(), 6.0);
        assert_eq!(bilinear_sample(&t, 0, 0.0, 0.75).unwrap(), 2.0);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = Tensor3::from_fn(2, 2, 3, |c, y, x| (c * 100 + y * 10 + x) as f32);
        let b = Tensor3::from_fn(1, 2, 3, |_, y, x| -((y * 10 + x) as f32));
        let ab = Tensor3::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.shape(), (3, 2, 3));
        assert_eq!(ab.slice_channels(0, 2).unwrap(), a);
        assert_eq!(ab.slice_channels(2, 3).unwrap(), b);
    }
}
