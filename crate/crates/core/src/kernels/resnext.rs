//! Grouped bottleneck block (1×1 reduce → grouped 3×3 → 1×1 expand, plus a
//! residual path), optionally with a deformable middle stage.
//!
//! `out = ReLU(expand(ReLU(mid(ReLU(reduce(x))))) + residual(x))`

use super::deform::{deform_convolve, grouped_conv2d, validate_offset_conv};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, ConvParams, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct ResNeXtBlockParams {
    pub cardinality: usize,
    pub reduce: ConvParams,
    pub grouped: ConvParams,
    pub expand: ConvParams,
    pub projection: Option<ConvParams>,
    /// Present when the middle stage is deformable.
    pub offset_conv: Option<ConvParams>,
}

impl ResNeXtBlockParams {
    pub fn new(
        cardinality: usize,
        reduce: ConvParams,
        grouped: ConvParams,
        expand: ConvParams,
        projection: Option<ConvParams>,
        offset_conv: Option<ConvParams>,
    ) -> Result<Self> {
        let block = Self { cardinality, reduce, grouped, expand, projection, offset_conv };
        block.validate()?;
        Ok(block)
    }

    /// All-zero block with the given widths: `in → mid → mid (grouped 3×3) → out`.
    /// A projection is added when `in != out`.
    pub fn zeros(
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        cardinality: usize,
        deformable: bool,
    ) -> Result<Self> {
        if cardinality == 0 || mid_channels % cardinality != 0 {
            return Err(Error::shape(format!(
                "{mid_channels} middle channels not divisible by cardinality {cardinality}"
            )));
        }
        let reduce = ConvParams::zeros(mid_channels, in_channels, 1)?;
        let grouped =
            ConvParams::zeros(mid_channels, mid_channels / cardinality, 3)?.with_padding(1);
        let expand = ConvParams::zeros(out_channels, mid_channels, 1)?;
        let projection = if in_channels != out_channels {
            Some(ConvParams::zeros(out_channels, in_channels, 1)?)
        } else {
            None
        };
        let offset_conv = if deformable {
            Some(ConvParams::zeros(18, mid_channels, 3)?.with_padding(1))
        } else {
            None
        };
        Self::new(cardinality, reduce, grouped, expand, projection, offset_conv)
    }

    pub fn is_deformable(&self) -> bool {
        self.offset_conv.is_some()
    }

    pub fn in_channels(&self) -> usize {
        self.reduce.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.expand.out_channels()
    }

    /// Weights plus biases over every stage, including projection and offset branch.
    pub fn param_count(&self) -> usize {
        self.convs().map(|(_, c)| c.param_count()).sum()
    }

    /// Weights only (no biases).
    pub fn weight_count(&self) -> usize {
        self.convs().map(|(_, c)| c.weights().len()).sum()
    }

    /// Named stages in serialization order.
    pub fn convs(&self) -> impl Iterator<Item = (&'static str, &ConvParams)> {
        [
            ("reduce", Some(&self.reduce)),
            ("grouped", Some(&self.grouped)),
            ("expand", Some(&self.expand)),
            ("projection", self.projection.as_ref()),
            ("offset", self.offset_conv.as_ref()),
        ]
        .into_iter()
        .filter_map(|(name, c)| c.map(|c| (name, c)))
    }

    pub fn validate(&self) -> Result<()> {
        let card = self.cardinality;
        if card == 0 {
            return Err(Error::invalid("cardinality must be positive"));
        }
        if self.reduce.kernel() != 1 || self.expand.kernel() != 1 {
            return Err(Error::shape("reduce and expand stages must be 1x1"));
        }
        let mid_in = self.reduce.out_channels();
        if mid_in % card != 0 || self.grouped.in_channels() * card != mid_in {
            return Err(Error::shape(format!(
                "grouped stage sees {} channels per group; reduce emits {mid_in} over {card} groups",
                self.grouped.in_channels()
            )));
        }
        if self.grouped.out_channels() % card != 0 {
            return Err(Error::shape(format!(
                "grouped stage output {} not divisible by cardinality {card}",
                self.grouped.out_channels()
            )));
        }
        if self.expand.in_channels() != self.grouped.out_channels() {
            return Err(Error::shape("expand input does not match grouped output"));
        }
        match &self.projection {
            Some(p) => {
                if p.kernel() != 1
                    || p.in_channels() != self.reduce.in_channels()
                    || p.out_channels() != self.expand.out_channels()
                {
                    return Err(Error::shape("projection must be 1x1 from block input to block output"));
                }
            }
            None => {
                if self.reduce.in_channels() != self.expand.out_channels() {
                    return Err(Error::shape(
                        "identity residual needs equal input and output channels; add a projection",
                    ));
                }
            }
        }
        if let Some(off) = &self.offset_conv {
            validate_offset_conv(&self.grouped, off)?;
            if off.in_channels() != mid_in {
                return Err(Error::shape("offset convolution must read the grouped stage input"));
            }
        }
        Ok(())
    }
}

pub fn resnext_block_forward(input: &Tensor3, params: &ResNeXtBlockParams) -> Result<Tensor3> {
    params.validate()?;
    let reduced = conv2d(input, &params.reduce)?.relu();
    let mid = match &params.offset_conv {
        Some(off) => deform_convolve(&reduced, &params.grouped, off, params.cardinality)?,
        None => grouped_conv2d(&reduced, &params.grouped, params.cardinality)?,
    }
    .relu();
    let expanded = conv2d(&mid, &params.expand)?;
    let residual = match &params.projection {
        Some(p) => conv2d(input, p)?,
        None => input.clone(),
    };
    if residual.shape() != expanded.shape() {
        return Err(Error::shape(format!(
            "residual {:?} does not match branch output {:?}",
            residual.shape(),
            expanded.shape()
        )));
    }
    Ok(expanded.add(&residual)?.relu())
}
