//! `features.bin`: a streamable archive of instance features.
//!
//! ```text
//! header:  "FEAT" | version u32 | dim u32 | count u64 | n_stages u32 | n_stages × str
//! record:  instance_id str | image_id str | category_id u32 | dim × f32
//! str:     byte length u32 | UTF-8 bytes
//! ```
//!
//! All integers and floats are little-endian. Records appear in write order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::InstanceFeature;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"FEAT";
pub const ARCHIVE_VERSION: u32 = 1;

const COUNT_OFFSET: u64 = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub dim: usize,
    pub count: u64,
    pub stages: Vec<String>,
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::format("string field", format!("implausible length {len}")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::format("string field", e.to_string()))
}

/// Writes records one at a time, patching the record count into the header on `finish`.
pub struct ArchiveWriter<W: Write + Seek> {
    inner: W,
    dim: usize,
    count: u64,
    buf: Vec<u8>,
}

impl<W: Write + Seek> ArchiveWriter<W> {
    pub fn new(mut inner: W, dim: usize, stages: &[String]) -> Result<Self> {
        let dim32 = u32::try_from(dim).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        inner.write_all(ARCHIVE_MAGIC)?;
        inner.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
        inner.write_all(&dim32.to_le_bytes())?;
        inner.write_all(&0u64.to_le_bytes())?;
        inner.write_all(&(stages.len() as u32).to_le_bytes())?;
        for s in stages {
            write_str(&mut inner, s)?;
        }
        Ok(Self { inner, dim, count: 0, buf: Vec::new() })
    }

    pub fn push(&mut self, f: &InstanceFeature) -> Result<()> {
        if f.dim() != self.dim {
            return Err(Error::Record {
                id: f.instance_id.clone(),
                reason: format!("dimension {} in a {}-dimensional archive", f.dim(), self.dim),
            });
        }
        self.buf.clear();
        write_str(&mut self.buf, &f.instance_id)?;
        write_str(&mut self.buf, &f.image_id)?;
        self.buf.extend_from_slice(&f.category_id.to_le_bytes());
        for v in &f.vector {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&self.buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<W> {
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streams records back; yields exactly `header.count` items.
pub struct ArchiveReader<R: Read> {
    inner: R,
    header: ArchiveHeader,
    remaining: u64,
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        inner
            .read_exact(&mut magic)
            .map_err(|e| Error::format("feature archive header", e.to_string()))?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::format("feature archive header", "bad magic"));
        }
        let version = read_u32(&mut inner)?;
        if version != ARCHIVE_VERSION {
            return Err(Error::format(
                "feature archive header",
                format!("unsupported version {version}"),
            ));
        }
        let dim = read_u32(&mut inner)? as usize;
        let count = read_u64(&mut inner)?;
        let n_stages = read_u32(&mut inner)?;
        let stages = (0..n_stages).map(|_| read_str(&mut inner)).collect::<Result<Vec<_>>>()?;
        Ok(Self { inner, header: ArchiveHeader { dim, count, stages }, remaining: count })
    }

    pub fn header(&self) -> &ArchiveHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<InstanceFeature> {
        let instance_id = read_str(&mut self.inner)?;
        let image_id = read_str(&mut self.inner)?;
        let category_id = read_u32(&mut self.inner)?;
        let mut bytes = vec![0u8; self.header.dim * 4];
        self.inner.read_exact(&mut bytes)?;
        let vector: Vec<f32> =
            bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Record { id: instance_id, reason: "non-finite vector".into() });
        }
        Ok(InstanceFeature { instance_id, image_id, category_id, vector })
    }
}

impl<R: Read> Iterator for ArchiveReader<R> {
    type Item = Result<InstanceFeature>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let rec = self.read_record().map_err(|e| match e {
            Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                Error::format("feature archive", "truncated record")
            }
            other => other,
        });
        if rec.is_err() {
            self.remaining = 0;
        }
        Some(rec)
    }
}

pub fn write_archive(
    path: impl AsRef<Path>,
    dim: usize,
    stages: &[String],
    features: impl IntoIterator<Item = InstanceFeature>,
) -> Result<u64> {
    let mut w = ArchiveWriter::new(BufWriter::new(File::create(path)?), dim, stages)?;
    for f in features {
        w.push(&f)?;
    }
    let count = w.count();
    w.finish()?;
    Ok(count)
}

pub fn open_archive(path: impl AsRef<Path>) -> Result<ArchiveReader<BufReader<File>>> {
    ArchiveReader::new(BufReader::new(File::open(path)?))
}

/// Reads a whole archive into memory.
pub fn read_archive(path: impl AsRef<Path>) -> Result<(ArchiveHeader, Vec<InstanceFeature>)> {
    let reader = open_archive(path)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}
