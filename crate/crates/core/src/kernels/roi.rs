//! ROI max pooling: one value per channel, the maximum activation inside the
//! (already rescaled) box.
//!
//! Cell `(x, y)` is covered when `floor(x_min) ≤ x ≤ ceil(x_max) − 1` (same for
//! `y`), clamped to the map. A zero-extent box sitting on a grid line snaps to
//! the cell at `floor(x_min)`.

use std::ops::Range;

use super::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Integer cell ranges `(xs, ys)` covered by `roi` on a `width × height` map.
pub fn roi_cells(roi: &BBox, width: usize, height: usize) -> Result<(Range<usize>, Range<usize>)> {
    let coords = [roi.x_min, roi.y_min, roi.x_max, roi.y_max];
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ROI".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::EmptyRoi("feature map has no cells".into()));
    }
    let xs = axis_cells(roi.x_min, roi.x_max, width);
    let ys = axis_cells(roi.y_min, roi.y_max, height);
    match (xs, ys) {
        (Some(xs), Some(ys)) => Ok((xs, ys)),
        _ => Err(Error::EmptyRoi(format!(
            "({}, {}, {}, {}) does not touch the {width}x{height} map",
            roi.x_min, roi.y_min, roi.x_max, roi.y_max
        ))),
    }
}

fn axis_cells(lo: f64, hi: f64, n: usize) -> Option<Range<usize>> {
    if lo > hi || hi < 0.0 || lo > n as f64 {
        return None;
    }
    let first = lo.floor();
    let mut last = hi.ceil() - 1.0;
    if last < first {
        last = first;
    }
    let first = first.max(0.0) as usize;
    let last = (last.min(n as f64 - 1.0)) as usize;
    let first = first.min(n - 1);
    Some(first..last + 1)
}

fn pool(maps: &Tensor3, roi: &BBox, mask: Option<&[bool]>) -> Result<Vec<f32>> {
    if (roi.ref_width as usize, roi.ref_height as usize) != (maps.width(), maps.height()) {
        return Err(Error::shape(format!(
            "ROI lives in a {}x{} frame but the map is {}x{}",
            roi.ref_width,
            roi.ref_height,
            maps.width(),
            maps.height()
        )));
    }
    let (xs, ys) = roi_cells(roi, maps.width(), maps.height())?;
    let w = maps.width();
    let out = (0..maps.channels())
        .map(|c| {
            let plane = maps.plane(c);
            let mut best = f32::NEG_INFINITY;
            for y in ys.clone() {
                for x in xs.clone() {
                    let v = match mask {
                        Some(m) if !m[y * w + x] => 0.0,
                        _ => plane[y * w + x],
                    };
                    best = best.max(v);
                }
            }
            best
        })
        .collect();
    Ok(out)
}

/// Per-channel maximum over the cells covered by `roi` (expressed in `maps` coordinates).
pub fn roi_max_pool(maps: &Tensor3, roi: &BBox) -> Result<Vec<f32>> {
    pool(maps, roi, None)
}

/// Like [`roi_max_pool`], but activations at cells where `mask` is false count as zero.
/// `mask` is row-major with one entry per map cell.
pub fn roi_max_pool_masked(maps: &Tensor3, roi: &BBox, mask: &[bool]) -> Result<Vec<f32>> {
    if mask.len() != maps.width() * maps.height() {
        return Err(Error::shape(format!(
            "mask has {} cells, map has {}",
            mask.len(),
            maps.width() * maps.height()
        )));
    }
    pool(maps, roi, Some(mask))
}
