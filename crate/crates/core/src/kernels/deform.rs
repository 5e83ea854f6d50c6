//! Deformable convolution (single offset group, no modulation).
//!
//! An auxiliary convolution over the same input predicts `2·K²` offset
//! channels. Channel `2k` holds Δy and channel `2k+1` holds Δx for filter tap
//! `k = ky·K + kx`. Each tap then reads the input by bilinear sampling at its
//! nominal location plus that offset.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, convolve, sample_plane, ConvParams, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct DeformConvParams {
    pub conv: ConvParams,
    pub offset_conv: ConvParams,
}

impl DeformConvParams {
    pub fn new(conv: ConvParams, offset_conv: ConvParams) -> Result<Self> {
        validate_offset_conv(&conv, &offset_conv)?;
        Ok(Self { conv, offset_conv })
    }

    /// Offset branch with all-zero weights and bias: behaves like `conv`.
    pub fn with_zero_offsets(conv: ConvParams, input_channels: usize) -> Result<Self> {
        let k = conv.kernel();
        let offset_conv = ConvParams::zeros(2 * k * k, input_channels, k)?
            .with_stride(conv.stride)
            .with_padding(conv.padding)
            .with_dilation(conv.dilation);
        Self::new(conv, offset_conv)
    }
}

pub(crate) fn validate_offset_conv(conv: &ConvParams, offset_conv: &ConvParams) -> Result<()> {
    let taps = conv.kernel() * conv.kernel();
    if offset_conv.out_channels() != 2 * taps {
        return Err(Error::shape(format!(
            "offset convolution must produce {} channels for a {}x{} kernel, has {}",
            2 * taps,
            conv.kernel(),
            conv.kernel(),
            offset_conv.out_channels()
        )));
    }
    if !offset_conv.same_geometry(conv) {
        return Err(Error::shape(
            "offset convolution geometry (kernel/stride/padding/dilation) differs from the main filter",
        ));
    }
    Ok(())
}

pub fn deformable_conv2d(input: &Tensor3, params: &DeformConvParams) -> Result<Tensor3> {
    deform_convolve(input, &params.conv, &params.offset_conv, 1)
}

/// Grouped deformable convolution; one offset field is shared by all groups.
pub fn deformable_grouped_conv2d(
    input: &Tensor3,
    params: &DeformConvParams,
    groups: usize,
) -> Result<Tensor3> {
    deform_convolve(input, &params.conv, &params.offset_conv, groups)
}

pub(crate) fn deform_convolve(
    input: &Tensor3,
    conv: &ConvParams,
    offset_conv: &ConvParams,
    groups: usize,
) -> Result<Tensor3> {
    validate_offset_conv(conv, offset_conv)?;
    if groups == 0 {
        return Err(Error::invalid("groups must be positive"));
    }
    if input.channels() != conv.in_channels() * groups || conv.out_channels() % groups != 0 {
        return Err(Error::shape(format!(
            "input has {} channels; filters are {}x{} with {groups} groups",
            input.channels(),
            conv.out_channels(),
            conv.in_channels()
        )));
    }
    let offsets = conv2d(input, offset_conv)?;
    let (oh, ow) = conv.output_size(input.height(), input.width())?;
    debug_assert_eq!((offsets.height(), offsets.width()), (oh, ow));

    let (h, w) = (input.height(), input.width());
    let k = conv.kernel();
    let taps = k * k;
    let positions = oh * ow;

    // Sampled input columns: [channel][tap][position].
    let mut columns = vec![0f64; input.channels() * taps * positions];
    for c in 0..input.channels() {
        let plane = input.plane(c);
        for ky in 0..k {
            for kx in 0..k {
                let tap = ky * k + kx;
                let dy_plane = offsets.plane(2 * tap);
                let dx_plane = offsets.plane(2 * tap + 1);
                let col = &mut columns[(c * taps + tap) * positions..(c * taps + tap + 1) * positions];
                for oy in 0..oh {
                    let base_y = (oy * conv.stride + ky * conv.dilation) as f64 - conv.padding as f64;
                    for ox in 0..ow {
                        let base_x =
                            (ox * conv.stride + kx * conv.dilation) as f64 - conv.padding as f64;
                        let p = oy * ow + ox;
                        let y = base_y + dy_plane[p] as f64;
                        let x = base_x + dx_plane[p] as f64;
                        col[p] = sample_plane(plane, h, w, x, y);
                    }
                }
            }
        }
    }

    let in_per_group = conv.in_channels();
    let out_per_group = conv.out_channels() / groups;
    let mut out = Vec::with_capacity(conv.out_channels() * positions);
    let mut acc = vec![0f64; positions];
    for o in 0..conv.out_channels() {
        let group = o / out_per_group;
        acc.fill(conv.bias()[o] as f64);
        for i in 0..in_per_group {
            let c = group * in_per_group + i;
            for ky in 0..k {
                for kx in 0..k {
                    let tap = ky * k + kx;
                    let wv = conv.weight(o, i, ky, kx) as f64;
                    let col = &columns[(c * taps + tap) * positions..(c * taps + tap + 1) * positions];
                    for (a, s) in acc.iter_mut().zip(col) {
                        *a += wv * s;
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    let result = Tensor3::new(conv.out_channels(), oh, ow, out)?;
    result.ensure_finite("deformable convolution output")?;
    Ok(result)
}

/// Grouped convolution: group `g` maps input channel slice `g` to output slice `g`.
/// `params.weights` is sized `[C_out][C_in/groups][K][K]`.
pub fn grouped_conv2d(input: &Tensor3, params: &ConvParams, groups: usize) -> Result<Tensor3> {
    if groups == 0 || input.channels() % groups != 0 || params.out_channels() % groups != 0 {
        return Err(Error::shape(format!(
            "{} input / {} output channels not divisible into {groups} groups",
            input.channels(),
            params.out_channels()
        )));
    }
    convolve(input, params, groups)
}
