//! Reference retrieval metrics.

use std::collections::{BTreeMap, BTreeSet};

/// AP@k evaluated term by term: for every rank `i ≤ k` holding a relevant
/// image, precision at `i` is recounted from scratch over the first `i` ranks.
/// `k = None` means the whole ranking.
pub fn ap_term_by_term(ranking: &[String], relevant: &BTreeSet<String>, k: Option<usize>) -> f64 {
    let depth = k.unwrap_or(usize::MAX).min(ranking.len());
    let mut total = 0.0;
    for i in 1..=depth {
        if relevant.contains(&ranking[i - 1]) {
            let hits = ranking[..i].iter().filter(|r| relevant.contains(*r)).count();
            total += hits as f64 / i as f64;
        }
    }
    let norm = match k {
        Some(k) => relevant.len().min(k),
        None => relevant.len(),
    };
    total / norm as f64
}

/// AP@k from the 1-based ranks of the relevant images: `Σ_j j / rank_j` over
/// relevant ranks within `k`, divided by `min(|relevant|, k)`.
pub fn ap_from_ranks(ranking: &[String], relevant: &BTreeSet<String>, k: Option<usize>) -> f64 {
    let limit = k.unwrap_or(usize::MAX);
    let ranks: Vec<usize> = ranking
        .iter()
        .enumerate()
        .filter(|(_, r)| relevant.contains(*r))
        .map(|(i, _)| i + 1)
        .filter(|&r| r <= limit)
        .collect();
    let sum: f64 = ranks.iter().enumerate().map(|(j, &r)| (j + 1) as f64 / r as f64).sum();
    sum / relevant.len().min(limit) as f64
}

/// Mean AP per cutoff over the queries in `gt`, using [`ap_from_ranks`].
pub fn reference_map(
    rankings: &BTreeMap<String, Vec<String>>,
    gt: &BTreeMap<String, BTreeSet<String>>,
    ks: &[Option<usize>],
) -> Vec<f64> {
    ks.iter()
        .map(|&k| {
            let total: f64 = gt.iter().map(|(q, rel)| ap_from_ranks(&rankings[q], rel, k)).sum();
            total / gt.len() as f64
        })
        .collect()
}
