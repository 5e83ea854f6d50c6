//! Full-sort search and group-by deduplication.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use instsearch_core::index::dot;
use instsearch_core::{InstanceFeature, RankedHit};

fn ranked_order(a: &RankedHit, b: &RankedHit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then_with(|| a.instance_id.cmp(&b.instance_id))
}

/// Scores every candidate, sorts the whole list and truncates to `k`.
pub fn full_sort_search(
    records: &[InstanceFeature],
    query: &InstanceFeature,
    k: usize,
    prune: bool,
) -> Vec<RankedHit> {
    let mut hits: Vec<RankedHit> = records
        .iter()
        .filter(|r| !prune || r.category_id == query.category_id)
        .map(|r| RankedHit {
            instance_id: r.instance_id.clone(),
            image_id: r.image_id.clone(),
            category_id: r.category_id,
            similarity: dot(&query.vector, &r.vector),
        })
        .collect();
    hits.sort_by(ranked_order);
    hits.truncate(k);
    hits
}

/// Groups hits by image, keeps each group's best hit, then re-sorts the survivors.
pub fn group_by_image_best(hits: &[RankedHit]) -> Vec<RankedHit> {
    let mut best: BTreeMap<&str, &RankedHit> = BTreeMap::new();
    for h in hits {
        let slot = best.entry(&h.image_id).or_insert(h);
        if ranked_order(h, slot) == Ordering::Less {
            *slot = h;
        }
    }
    let mut out: Vec<RankedHit> = best.into_values().cloned().collect();
    out.sort_by(ranked_order);
    out
}
