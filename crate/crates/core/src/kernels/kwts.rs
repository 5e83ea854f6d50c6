//! `KWTS` block-weight files.
//!
//! ```text
//! "KWTS" | version u32 LE | header_len u32 LE | header JSON (UTF-8) | blobs
//! ```
//!
//! The header lists every convolution stage (name, shape, geometry). The blob
//! section holds, for each listed stage in order, its weights
//! (`[out][in][k][k]`) followed by its bias, all little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resnext::ResNeXtBlockParams;
use crate::error::{Error, Result};
use crate::tensor::ConvParams;

pub const KWTS_MAGIC: &[u8; 4] = b"KWTS";
pub const KWTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwtsHeader {
    pub cardinality: usize,
    pub deformable: bool,
    pub convs: Vec<ConvSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    fn of(name: &str, c: &ConvParams) -> Self {
        Self {
            name: name.to_string(),
            out_channels: c.out_channels(),
            in_channels: c.in_channels(),
            kernel: c.kernel(),
            stride: c.stride,
            padding: c.padding,
            dilation: c.dilation,
        }
    }

    fn weight_len(&self) -> Option<usize> {
        self.out_channels
            .checked_mul(self.in_channels)?
            .checked_mul(self.kernel)?
            .checked_mul(self.kernel)
    }
}

pub fn write_block<W: Write>(mut w: W, block: &ResNeXtBlockParams) -> Result<()> {
    let header = KwtsHeader {
        cardinality: block.cardinality,
        deformable: block.is_deformable(),
        convs: block.convs().map(|(name, c)| ConvSpec::of(name, c)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(KWTS_MAGIC)?;
    w.write_all(&KWTS_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, conv) in block.convs() {
        for v in conv.weights().iter().chain(conv.bias()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_block<R: Read>(mut r: R) -> Result<ResNeXtBlockParams> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|e| Error::format("KWTS header", e.to_string()))?;
    if &head[..4] != KWTS_MAGIC {
        return Err(Error::format("KWTS header", "bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != KWTS_VERSION {
        return Err(Error::format("KWTS header", format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|e| Error::format("KWTS header", e.to_string()))?;
    let header: KwtsHeader = serde_json::from_slice(&json)?;

    let mut take = |n: usize, what: &str| -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::format("KWTS blobs", format!("truncated at `{what}`")))?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    };

    let mut stages: Vec<(String, ConvParams)> = Vec::new();
    for spec in &header.convs {
        let n = spec
            .weight_len()
            .ok_or_else(|| Error::format("KWTS header", format!("`{}` too large", spec.name)))?;
        let weights = take(n, &spec.name)?;
        let bias = take(spec.out_channels, &spec.name)?;
        let conv = ConvParams::new(spec.out_channels, spec.in_channels, spec.kernel, weights, bias)?
            .with_stride(spec.stride)
            .with_padding(spec.padding)
            .with_dilation(spec.dilation);
        stages.push((spec.name.clone(), conv));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format("KWTS blobs", format!("{} trailing bytes", rest.len())));
    }

    let mut stage = |name: &str| -> Option<ConvParams> {
        let pos = stages.iter().position(|(n, _)| n == name)?;
        Some(stages.remove(pos).1)
    };
    let required = |c: Option<ConvParams>, name: &str| {
        c.ok_or_else(|| Error::format("KWTS header", format!("missing stage `{name}`")))
    };
    let reduce = required(stage("reduce"), "reduce")?;
    let grouped = required(stage("grouped"), "grouped")?;
    let expand = required(stage("expand"), "expand")?;
    let projection = stage("projection");
    let offset_conv = stage("offset");
    if header.deformable != offset_conv.is_some() {
        return Err(Error::format("KWTS header", "deformable flag disagrees with offset stage"));
    }
    if let Some((name, _)) = stages.first() {
        return Err(Error::format("KWTS header", format!("unknown stage `{name}`")));
    }
    ResNeXtBlockParams::new(header.cardinality, reduce, grouped, expand, projection, offset_conv)
}

pub fn save_block(path: impl AsRef<Path>, block: &ResNeXtBlockParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_block(&mut w, block)?;
    w.flush()?;
    Ok(())
}

pub fn load_block(path: impl AsRef<Path>) -> Result<ResNeXtBlockParams> {
    read_block(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(block: &mut ResNeXtBlockParams) {
        let mut v = 0.0f32;
        let mut refill = |c: &ConvParams| {
            let w: Vec<f32> = c.weights().iter().map(|_| { v += 0.25; v }).collect();
            let b: Vec<f32> = c.bias().iter().map(|_| { v -= 0.5; v }).collect();
            ConvParams::new(c.out_channels(), c.in_channels(), c.kernel(), w, b)
                .unwrap()
                .with_stride(c.stride)
                .with_padding(c.padding)
                .with_dilation(c.dilation)
        };
        block.reduce = refill(&block.reduce);
        block.grouped = refill(&block.grouped);
        block.expand = refill(&block.expand);
        block.projection = block.projection.as_ref().map(&mut refill);
        block.offset_conv = block.offset_conv.as_ref().map(&mut refill);
    }

    #[test]
    fn block_roundtrip() {
        for deformable in [false, true] {
            let mut block = ResNeXtBlockParams::zeros(4, 4, 8, 2, deformable).unwrap();
            filled(&mut block);
            let mut buf = Vec::new();
            write_block(&mut buf, &block).unwrap();
            assert_eq!(&buf[..4], b"KWTS");
            assert_eq!(read_block(&buf[..]).unwrap(), block);
        }
    }

    #[test]
    fn truncated_and_trailing_rejected() {
        let block = ResNeXtBlockParams::zeros(4, 4, 4, 2, true).unwrap();
        let mut buf = Vec::new();
        write_block(&mut buf, &block).unwrap();
        assert!(read_block(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(read_block(&extra[..]).is_err());
    }
}
