//! Detection and segmentation AP at an IoU threshold.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::kernels::BBox;
use crate::mask::Rle;

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(BBox),
    Mask(Rle),
}

/// `|A ∩ B| / |A ∪ B|` for two boxes or two masks in the same frame.
pub fn iou(a: &Region, b: &Region) -> Result<f64> {
    let (inter, area_a, area_b) = match (a, b) {
        (Region::Box(a), Region::Box(b)) => {
            if (a.ref_width, a.ref_height) != (b.ref_width, b.ref_height) {
                return Err(Error::shape("boxes live in different reference frames"));
            }
            (a.intersection_area(b), a.area(), b.area())
        }
        (Region::Mask(a), Region::Mask(b)) => {
            (a.intersection_area(b)? as f64, a.area() as f64, b.area() as f64)
        }
        _ => return Err(Error::invalid("cannot compare a box with a mask")),
    };
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return Err(Error::invalid("IoU of two empty regions is undefined"));
    }
    Ok(inter / union)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub image_id: String,
    pub category_id: u32,
    pub region: Region,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub image_id: String,
    pub category_id: u32,
    pub region: Region,
}

/// The ten thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// AP at IoU threshold `r`: detections sorted by score (descending, stable), each
/// greedily matched to the unmatched ground truth of the same image and category
/// with the highest IoU, counted as a true positive when that IoU is ≥ `r`. The
/// area under the all-point interpolated precision envelope is returned.
pub fn ap_at_iou(dets: &[ScoredInstance], gts: &[GtInstance], r: f64) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::invalid("no ground-truth instances"));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::invalid(format!("IoU threshold {r} outside (0, 1]")));
    }
    if dets.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite("detection score".into()));
    }
    let mut pool: HashMap<(&str, u32), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        pool.entry((g.image_id.as_str(), g.category_id)).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut matched = vec![false; gts.len()];
    let mut tp_flags = Vec::with_capacity(dets.len());
    for &di in &order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = pool.get(&(d.image_id.as_str(), d.category_id)) {
            for &gi in cands {
                if matched[gi] {
                    continue;
                }
                let v = iou(&d.region, &gts[gi].region)?;
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
        }
        match best {
            Some((gi, v)) if v >= r => {
                matched[gi] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    let n_gt = gts.len() as f64;
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    for (i, &t) in tp_flags.iter().enumerate() {
        tp += t as usize;
        recall.push(tp as f64 / n_gt);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(ap)
}

/// Mean over ground-truth categories of the per-category AP at threshold `r`.
pub fn map_r(dets: &[ScoredInstance], gts: &[GtInstance], r: f64) -> Result<f64> {
    let cats: BTreeSet<u32> = gts.iter().map(|g| g.category_id).collect();
    if cats.is_empty() {
        return Err(Error::invalid("no ground-truth instances"));
    }
    let mut sum = 0.0;
    for &c in &cats {
        let d: Vec<_> = dets.iter().filter(|d| d.category_id == c).cloned().collect();
        let g: Vec<_> = gts.iter().filter(|g| g.category_id == c).cloned().collect();
        sum += ap_at_iou(&d, &g, r)?;
    }
    Ok(sum / cats.len() as f64)
}

/// [`map_r`] averaged over `thresholds`, e.g. [`coco_thresholds`].
pub fn map_r_over_thresholds(
    dets: &[ScoredInstance],
    gts: &[GtInstance],
    thresholds: &[f64],
) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::invalid("no IoU thresholds"));
    }
    let mut sum = 0.0;
    for &t in thresholds {
        sum += map_r(dets, gts, t)?;
    }
    Ok(sum / thresholds.len() as f64)
}
