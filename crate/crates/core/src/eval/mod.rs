//! Retrieval metrics over image-level rankings.
//!
//! `AP@k = (1 / min(|relevant|, k)) · Σ_{i ≤ k} P(i) · rel(i)`, where `P(i)`
//! is the fraction of relevant images among the first `i`. A perfect
//! truncated ranking scores 1.0 even when `|relevant| > k`. `k = ∞` gives
//! classical full-ranking AP.

mod segm;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::index::RankedHit;

pub use segm::{
    ap_at_iou, coco_thresholds, iou, map_r, map_r_over_thresholds, GtInstance, Region,
    ScoredInstance,
};

/// Ranking depth: a finite `k` or the whole list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cutoff {
    Top(usize),
    All,
}

impl Cutoff {
    pub fn limit(self) -> usize {
        match self {
            Cutoff::Top(k) => k,
            Cutoff::All => usize::MAX,
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Top(k) => write!(f, "{k}"),
            Cutoff::All => f.write_str("all"),
        }
    }
}

impl FromStr for Cutoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" | "inf" | "∞" => Ok(Cutoff::All),
            t => match t.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Cutoff::Top(k)),
                _ => Err(Error::invalid(format!("`{s}` is not a positive cutoff or `all`"))),
            },
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cutoff::Top(k) => s.serialize_u64(*k as u64),
            Cutoff::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(k) if k > 0 => Ok(Cutoff::Top(k)),
            Raw::N(_) => Err(serde::de::Error::custom("cutoff must be positive")),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The reported depths: 10, 20, 50, 100 and the full ranking.
pub const DEFAULT_CUTOFFS: [Cutoff; 5] =
    [Cutoff::Top(10), Cutoff::Top(20), Cutoff::Top(50), Cutoff::Top(100), Cutoff::All];

/// Relevant image ids per query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub relevant: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    /// Keeps only the listed queries; unknown ids are an error.
    pub fn restrict<S: AsRef<str>>(&self, query_ids: &[S]) -> Result<Self> {
        let mut relevant = BTreeMap::new();
        for q in query_ids {
            let q = q.as_ref();
            let rel = self
                .relevant
                .get(q)
                .ok_or_else(|| Error::Missing(format!("ground truth for query `{q}`")))?;
            relevant.insert(q.to_string(), rel.clone());
        }
        Ok(Self { relevant })
    }
}

pub fn average_precision_at_k<S: AsRef<str>>(
    ranked_images: &[S],
    relevant: &BTreeSet<String>,
    k: Cutoff,
) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::invalid("empty relevant set"));
    }
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, img) in ranked_images.iter().take(k.limit()).enumerate() {
        let img = img.as_ref();
        if !seen.insert(img) {
            return Err(Error::invalid(format!("image `{img}` ranked twice")));
        }
        if relevant.contains(img) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len().min(k.limit()) as f64)
}

/// One query's image-level ranking as produced by search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub hits: Vec<RankedHit>,
    pub scanned: usize,
}

impl QueryResult {
    pub fn ranked_images(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.image_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query_id: String,
    pub relevant: usize,
    /// Aligned with [`EvalReport::ks`].
    pub ap: Vec<f64>,
}

/// Per-query AP and per-cutoff mAP. Depends only on the rankings and the
/// ground truth: timings and scan counts are reported by search, so equal
/// rankings serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<Cutoff>,
    pub map: Vec<f64>,
    pub queries: Vec<QueryAp>,
}

impl EvalReport {
    pub fn map_at(&self, k: Cutoff) -> Option<f64> {
        self.ks.iter().position(|&c| c == k).map(|i| self.map[i])
    }

    /// Flat `(query_id, k, ap)` rows, one per query × cutoff.
    pub fn rows(&self) -> impl Iterator<Item = (&str, Cutoff, f64)> + '_ {
        self.queries
            .iter()
            .flat_map(move |q| self.ks.iter().zip(&q.ap).map(move |(&k, &ap)| (q.query_id.as_str(), k, ap)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Checks cutoffs are non-empty, strictly ascending and unique.
pub fn validate_cutoffs(ks: &[Cutoff]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::invalid("no cutoffs given"));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("cutoffs must be strictly ascending"));
    }
    Ok(())
}

/// Evaluates every query in `gt`; results for queries outside `gt` are ignored.
/// Queries are reported in id order, so the output does not depend on the
/// order of `results`.
pub fn map_at_k(results: &[QueryResult], gt: &GroundTruth, ks: &[Cutoff]) -> Result<EvalReport> {
    validate_cutoffs(ks)?;
    if gt.is_empty() {
        return Err(Error::invalid("ground truth has no queries"));
    }
    let mut by_id: BTreeMap<&str, &QueryResult> = BTreeMap::new();
    for r in results {
        if by_id.insert(&r.query_id, r).is_some() {
            return Err(Error::invalid(format!("query `{}` has two rankings", r.query_id)));
        }
    }
    let mut queries = Vec::with_capacity(gt.len());
    for (qid, relevant) in &gt.relevant {
        let r = by_id
            .get(qid.as_str())
            .ok_or_else(|| Error::Missing(format!("ranking for query `{qid}`")))?;
        let ranked = r.ranked_images();
        let ap = ks
            .iter()
            .map(|&k| average_precision_at_k(&ranked, relevant, k))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Record { id: qid.clone(), reason: e.to_string() })?;
        queries.push(QueryAp { query_id: qid.clone(), relevant: relevant.len(), ap });
    }
    let n = queries.len() as f64;
    let map = (0..ks.len()).map(|i| queries.iter().map(|q| q.ap[i]).sum::<f64>() / n).collect();
    Ok(EvalReport { ks: ks.to_vec(), map, queries })
}
