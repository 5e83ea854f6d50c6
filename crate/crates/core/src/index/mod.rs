//! Exact cosine search over unit-norm instance features, with optional
//! pruning to the query's category.
//!
//! Vectors are stored contiguously per category posting list, so a pruned
//! search is a single linear scan over one block. Rankings are ordered by
//! similarity descending, ties broken by `instance_id` ascending; the scan is
//! split into fixed-size chunks, so results do not depend on thread count.

mod file;
mod topk;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use memmap2::Mmap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{InstanceFeature, UNIT_NORM_TOLERANCE};
use topk::{Cand, TopK};

pub use file::{INDEX_MAGIC, INDEX_VERSION};

/// Rows scored per parallel work item.
const SCAN_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub instance_id: String,
    pub image_id: String,
    pub category_id: u32,
    pub similarity: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub hits: Vec<RankedHit>,
    /// Number of stored vectors compared against the query.
    pub scanned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RecordMeta {
    pub instance_id: String,
    pub image_id: String,
    pub category_id: u32,
}

#[derive(Debug)]
pub(crate) enum VectorBlock {
    Owned(Vec<f32>),
    Mapped { map: Arc<Mmap>, offset: usize, len: usize },
}

impl VectorBlock {
    pub(crate) fn as_slice(&self) -> &[f32] {
        match self {
            VectorBlock::Owned(v) => v,
            VectorBlock::Mapped { map, offset, len } => {
                bytemuck::cast_slice(&map[*offset..*offset + *len * 4])
            }
        }
    }
}

#[derive(Debug)]
pub(crate) struct Posting {
    pub ordinals: Vec<u32>,
    pub vectors: VectorBlock,
}

/// Immutable similarity index. Record ordinals follow insertion order.
#[derive(Debug)]
pub struct SearchIndex {
    dim: usize,
    records: Vec<RecordMeta>,
    postings: BTreeMap<u32, Posting>,
}

/// Incremental construction; `finish` yields the immutable index.
pub struct IndexBuilder {
    dim: Option<usize>,
    records: Vec<RecordMeta>,
    ids: HashSet<String>,
    postings: BTreeMap<u32, (Vec<u32>, Vec<f32>)>,
}

impl IndexBuilder {
    /// `dim` is fixed by the first record when `None`.
    pub fn new(dim: Option<usize>) -> Self {
        Self { dim, records: Vec::new(), ids: HashSet::new(), postings: BTreeMap::new() }
    }

    pub fn push(&mut self, f: InstanceFeature) -> Result<()> {
        let fail = |reason: String| Error::Record { id: f.instance_id.clone(), reason };
        let dim = *self.dim.get_or_insert(f.dim());
        if f.dim() != dim || dim == 0 {
            return Err(fail(format!("dimension {} in a {dim}-dimensional index", f.dim())));
        }
        if f.vector.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite vector".into()));
        }
        if !f.is_unit() {
            return Err(fail(format!(
                "vector norm {} is not 1 within {UNIT_NORM_TOLERANCE}",
                f.norm()
            )));
        }
        if self.ids.contains(&f.instance_id) {
            return Err(fail("duplicate instance id".into()));
        }
        let ordinal = u32::try_from(self.records.len())
            .map_err(|_| fail("index holds at most u32::MAX records".into()))?;
        let (ords, vecs) = self.postings.entry(f.category_id).or_default();
        ords.push(ordinal);
        vecs.extend_from_slice(&f.vector);
        self.ids.insert(f.instance_id.clone());
        self.records.push(RecordMeta {
            instance_id: f.instance_id,
            image_id: f.image_id,
            category_id: f.category_id,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn finish(self) -> SearchIndex {
        let postings = self
            .postings
            .into_iter()
            .map(|(cat, (ordinals, vectors))| {
                (cat, Posting { ordinals, vectors: VectorBlock::Owned(vectors) })
            })
            .collect();
        SearchIndex { dim: self.dim.unwrap_or(0), records: self.records, postings }
    }
}

/// Builds an index from a feature stream, failing on the first bad record.
pub fn build_index(features: impl IntoIterator<Item = InstanceFeature>) -> Result<SearchIndex> {
    let mut b = IndexBuilder::new(None);
    for f in features {
        b.push(f)?;
    }
    Ok(b.finish())
}

/// Dot product with eight independent lanes; fixed summation order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
        + tail
}

impl SearchIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(category_id, posting size)` in ascending category order.
    pub fn posting_sizes(&self) -> Vec<(u32, usize)> {
        self.postings.iter().map(|(&c, p)| (c, p.ordinals.len())).collect()
    }

    pub fn posting_size(&self, category_id: u32) -> usize {
        self.postings.get(&category_id).map_or(0, |p| p.ordinals.len())
    }

    /// Sorted record ordinals filed under `category_id`.
    pub fn posting(&self, category_id: u32) -> &[u32] {
        self.postings.get(&category_id).map_or(&[], |p| &p.ordinals)
    }

    pub fn instance_id(&self, ordinal: usize) -> &str {
        &self.records[ordinal].instance_id
    }

    /// Top-`k` hits for `query`. With `prune_by_category` only the query
    /// category's posting list is scanned.
    pub fn search(
        &self,
        query: &InstanceFeature,
        k: usize,
        prune_by_category: bool,
    ) -> Result<SearchOutcome> {
        let category = prune_by_category.then_some(query.category_id);
        self.search_vector(&query.vector, category, k)
    }

    /// Top-`k` hits for a raw vector, optionally restricted to one category.
    pub fn search_vector(
        &self,
        query: &[f32],
        category: Option<u32>,
        k: usize,
    ) -> Result<SearchOutcome> {
        if self.is_empty() {
            return Ok(SearchOutcome { hits: Vec::new(), scanned: 0 });
        }
        if query.len() != self.dim {
            return Err(Error::shape(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim
            )));
        }
        let postings: Vec<&Posting> = match category {
            Some(c) => self.postings.get(&c).into_iter().collect(),
            None => self.postings.values().collect(),
        };
        let scanned = postings.iter().map(|p| p.ordinals.len()).sum();
        if k == 0 || scanned == 0 {
            return Ok(SearchOutcome { hits: Vec::new(), scanned });
        }

        let mut work = Vec::new();
        for p in &postings {
            for start in (0..p.ordinals.len()).step_by(SCAN_CHUNK) {
                work.push((*p, start, (start + SCAN_CHUNK).min(p.ordinals.len())));
            }
        }
        let partials: Vec<TopK> = work
            .par_iter()
            .map(|&(p, start, end)| {
                let vectors = p.vectors.as_slice();
                let mut top = TopK::new(k);
                for row in start..end {
                    let v = &vectors[row * self.dim..(row + 1) * self.dim];
                    let ord = p.ordinals[row];
                    let id = self.records[ord as usize].instance_id.as_str();
                    top.offer(Cand { sim: dot(query, v), ord, id });
                }
                top
            })
            .collect();
        let mut top = TopK::new(k);
        for part in partials {
            top.merge(part);
        }
        let hits = top
            .into_sorted()
            .into_iter()
            .map(|c| {
                let r = &self.records[c.ord as usize];
                RankedHit {
                    instance_id: r.instance_id.clone(),
                    image_id: r.image_id.clone(),
                    category_id: r.category_id,
                    similarity: c.sim,
                }
            })
            .collect();
        Ok(SearchOutcome { hits, scanned })
    }

    /// Image-level ranking of at least `n_images` distinct images when that
    /// many candidates exist: instance hits are fetched with a growing depth
    /// and collapsed by [`image_level_dedup`].
    pub fn search_images(
        &self,
        query: &InstanceFeature,
        n_images: usize,
        prune_by_category: bool,
    ) -> Result<SearchOutcome> {
        let mut depth = n_images.max(1);
        loop {
            let out = self.search(query, depth, prune_by_category)?;
            let exhausted = out.hits.len() < depth;
            let mut hits = image_level_dedup(out.hits);
            if hits.len() >= n_images || exhausted {
                hits.truncate(n_images);
                return Ok(SearchOutcome { hits, scanned: out.scanned });
            }
            depth = depth.saturating_mul(2);
        }
    }

    pub(crate) fn parts(&self) -> (&[RecordMeta], &BTreeMap<u32, Posting>) {
        (&self.records, &self.postings)
    }

    pub(crate) fn from_parts(
        dim: usize,
        records: Vec<RecordMeta>,
        postings: BTreeMap<u32, Posting>,
    ) -> Self {
        Self { dim, records, postings }
    }
}

/// Keeps the first (highest-ranked) hit of each image, preserving order.
pub fn image_level_dedup(hits: Vec<RankedHit>) -> Vec<RankedHit> {
    let mut seen = HashSet::new();
    hits.into_iter().filter(|h| seen.insert(h.image_id.clone())).collect()
}
