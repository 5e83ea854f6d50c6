//! `index.bin` layout (little-endian):
//!
//! ```text
//! 0   "IIDX"
//! 4   version u32
//! 8   dim u32
//! 12  record count u64
//! 20  category count u32
//! 24  category table: per posting, ascending category: category_id u32 | size u64
//!     metadata block: per record ordinal: instance_id str | image_id str | category_id u32
//!     posting block: per posting, its sorted ordinals as u32
//!     zero padding up to a 64-byte boundary
//!     vector block: per posting, in table order, size × dim f32
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. The vector block is
//! 64-byte aligned in the file, so a mapped file can be scanned in place.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use memmap2::Mmap;

use super::{Posting, RecordMeta, SearchIndex, VectorBlock};
use crate::error::{Error, Result};
use crate::features::archive::{read_str, read_u32, read_u64, write_str};

pub const INDEX_MAGIC: &[u8; 4] = b"IIDX";
pub const INDEX_VERSION: u32 = 1;

const ALIGN: u64 = 64;

fn bad(reason: impl Into<String>) -> Error {
    Error::format("index file", reason)
}

/// Reads through a `Read`, tracking the byte offset.
struct Counting<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

impl SearchIndex {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let (records, postings) = self.parts();
        let mut pos = 0u64;
        let mut put = |w: &mut W, bytes: &[u8]| -> Result<u64> {
            w.write_all(bytes)?;
            pos += bytes.len() as u64;
            Ok(pos)
        };
        put(w, INDEX_MAGIC)?;
        put(w, &INDEX_VERSION.to_le_bytes())?;
        put(w, &(self.dim() as u32).to_le_bytes())?;
        put(w, &(records.len() as u64).to_le_bytes())?;
        put(w, &(postings.len() as u32).to_le_bytes())?;
        for (&cat, p) in postings {
            put(w, &cat.to_le_bytes())?;
            put(w, &(p.ordinals.len() as u64).to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for r in records {
            buf.clear();
            write_str(&mut buf, &r.instance_id)?;
            write_str(&mut buf, &r.image_id)?;
            buf.extend_from_slice(&r.category_id.to_le_bytes());
            put(w, &buf)?;
        }
        let mut end = 0;
        for p in postings.values() {
            for &o in &p.ordinals {
                end = put(w, &o.to_le_bytes())?;
            }
        }
        if records.is_empty() {
            end = put(w, &[])?;
        }
        let pad = (ALIGN - end % ALIGN) % ALIGN;
        put(w, &vec![0u8; pad as usize])?;
        for p in postings.values() {
            buf.clear();
            for v in p.vectors.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            put(w, &buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)
    }

    /// Loads `index.bin`, mapping the vector block instead of copying it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        // SAFETY: the file is opened read-only and is not expected to be modified while mapped.
        let map = Arc::new(unsafe { Mmap::map(&file)? });
        let mut r = Counting { inner: BufReader::new(&map[..]), pos: 0 };
        let (dim, records, table) = read_header_and_meta(&mut r)?;
        let ordinals = read_postings(&mut r, &table)?;
        let start = r.pos.div_ceil(ALIGN) * ALIGN;
        let total: u64 = table.iter().map(|&(_, n)| n).sum();
        let expected = start + total * dim as u64 * 4;
        if map.len() as u64 != expected {
            return Err(bad(format!("file has {} bytes, layout needs {expected}", map.len())));
        }
        let zero_copy = cfg!(target_endian = "little") && map.as_ptr() as usize % 4 == 0;
        let mut postings = BTreeMap::new();
        let mut offset = start as usize;
        for ((cat, n), ords) in table.into_iter().zip(ordinals) {
            let len = n as usize * dim;
            let vectors = if zero_copy {
                VectorBlock::Mapped { map: Arc::clone(&map), offset, len }
            } else {
                VectorBlock::Owned(
                    map[offset..offset + len * 4]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                )
            };
            offset += len * 4;
            postings.insert(cat, Posting { ordinals: ords, vectors });
        }
        let index = SearchIndex::from_parts(dim, records, postings);
        index.check_vectors()?;
        Ok(index)
    }

    /// Verifies that every stored vector is finite and unit-norm.
    fn check_vectors(&self) -> Result<()> {
        let (records, postings) = self.parts();
        for p in postings.values() {
            let block = p.vectors.as_slice();
            for (row, &o) in p.ordinals.iter().enumerate() {
                let v = &block[row * self.dim()..(row + 1) * self.dim()];
                let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
                if !n.is_finite() || (n - 1.0).abs() > crate::features::UNIT_NORM_TOLERANCE {
                    return Err(Error::Record {
                        id: records[o as usize].instance_id.clone(),
                        reason: format!("stored vector has norm {n}"),
                    });
                }
            }
        }
        Ok(())
    }
}

type Table = Vec<(u32, u64)>;

fn read_header_and_meta<R: Read>(r: &mut R) -> Result<(usize, Vec<RecordMeta>, Table)> {
    let eof = |e: Error| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => bad("truncated"),
        other => other,
    };
    let inner = |r: &mut R| -> Result<(usize, Vec<RecordMeta>, Table)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != INDEX_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let count = read_u64(r)?;
        let n_cats = read_u32(r)?;
        let mut table = Vec::with_capacity(n_cats as usize);
        for _ in 0..n_cats {
            table.push((read_u32(r)?, read_u64(r)?));
        }
        if table.iter().map(|&(_, n)| n).sum::<u64>() != count {
            return Err(bad("posting sizes do not add up to the record count"));
        }
        if table.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(bad("category table not strictly ascending"));
        }
        if count > 0 && dim == 0 {
            return Err(bad("zero dimension"));
        }
        let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            let instance_id = read_str(r)?;
            let image_id = read_str(r)?;
            let category_id = read_u32(r)?;
            records.push(RecordMeta { instance_id, image_id, category_id });
        }
        Ok((dim, records, table))
    };
    inner(r).map_err(eof)
}

fn read_postings<R: Read>(r: &mut R, table: &Table) -> Result<Vec<Vec<u32>>> {
    let total: u64 = table.iter().map(|&(_, n)| n).sum();
    let mut seen = vec![false; total as usize];
    let mut out = Vec::with_capacity(table.len());
    for &(_, n) in table {
        let mut ords = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let o = read_u32(r).map_err(|_| bad("truncated posting block"))?;
            let slot = seen.get_mut(o as usize).ok_or_else(|| bad(format!("ordinal {o} out of range")))?;
            if *slot || ords.last().is_some_and(|&p| p >= o) {
                return Err(bad("posting ordinals not unique and sorted"));
            }
            *slot = true;
            ords.push(o);
        }
        out.push(ords);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::InstanceFeature;
    use crate::index::build_index;

    fn sample() -> SearchIndex {
        let f = |id: &str, cat: u32, v: [f32; 3]| {
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            InstanceFeature {
                instance_id: id.into(),
                image_id: format!("img-{id}"),
                category_id: cat,
                vector: v.iter().map(|x| x / n).collect(),
            }
        };
        build_index(vec![
            f("a", 2, [1.0, 0.0, 0.0]),
            f("b", 1, [0.0, 1.0, 0.0]),
            f("c", 2, [1.0, 1.0, 0.0]),
            f("d", 7, [0.0, 1.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn roundtrip_through_mmap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        let idx = sample();
        idx.save(&path).unwrap();
        let back = SearchIndex::load(&path).unwrap();
        assert_eq!(back.dim(), 3);
        assert_eq!(back.posting_sizes(), idx.posting_sizes());
        let q = [0.6f32, 0.8, 0.0];
        for cat in [None, Some(2), Some(9)] {
            assert_eq!(
                back.search_vector(&q, cat, 10).unwrap(),
                idx.search_vector(&q, cat, 10).unwrap()
            );
        }
        let mut bytes = Vec::new();
        back.write_to(&mut bytes).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
        assert_eq!(bytes.len() % 4, 0);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(SearchIndex::load(&path), Err(Error::Format { .. })));

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        std::fs::write(&path, &wrong).unwrap();
        assert!(matches!(SearchIndex::load(&path), Err(Error::Format { .. })));

        std::fs::write(&path, &bytes[..30]).unwrap();
        assert!(matches!(SearchIndex::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_index_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        build_index(Vec::new()).unwrap().save(&path).unwrap();
        let back = SearchIndex::load(&path).unwrap();
        assert!(back.is_empty());
    }
}
