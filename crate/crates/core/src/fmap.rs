//! `FMAP` feature-map files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "FMAP"
//! 4       4         version (u32 LE, currently 1)
//! 8       12        C, H, W (u32 LE each)
//! 20      4·C·H·W   values, f32 LE, [c][y][x] order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;

pub fn write_fmap<W: Write>(mut w: W, tensor: &Tensor3) -> Result<()> {
    w.write_all(FMAP_MAGIC)?;
    w.write_all(&FMAP_VERSION.to_le_bytes())?;
    for dim in [tensor.channels(), tensor.height(), tensor.width()] {
        let dim = u32::try_from(dim).map_err(|_| Error::shape("dimension exceeds u32"))?;
        w.write_all(&dim.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.data().len() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_fmap<R: Read>(mut r: R) -> Result<Tensor3> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|e| Error::format("FMAP header", e.to_string()))?;
    if &header[0..4] != FMAP_MAGIC {
        return Err(Error::format("FMAP header", "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FMAP_VERSION {
        return Err(Error::format("FMAP header", format!("unsupported version {version}")));
    }
    let (c, h, w) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let n = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::format("FMAP header", "dimensions overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::format(
            "FMAP body",
            format!("{c}x{h}x{w} needs {} bytes, found {}", n * 4, bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let tensor = Tensor3::new(c, h, w, data)?;
    tensor.ensure_finite("FMAP body")?;
    Ok(tensor)
}

pub fn save_fmap(path: impl AsRef<Path>, tensor: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fmap(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn load_fmap(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_fmap(BufReader::new(File::open(path)?))
}
