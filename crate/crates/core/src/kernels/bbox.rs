use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in continuous pixel coordinates of a `ref_width × ref_height` space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub ref_width: u32,
    pub ref_height: u32,
}

impl BBox {
    pub fn new(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        ref_width: u32,
        ref_height: u32,
    ) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max, ref_width, ref_height };
        b.validate()?;
        Ok(b)
    }

    /// Box covering the whole reference space.
    pub fn full(ref_width: u32, ref_height: u32) -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: ref_width as f64,
            y_max: ref_height as f64,
            ref_width,
            ref_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bounding box".into()));
        }
        let ok = 0.0 <= self.x_min
            && self.x_min <= self.x_max
            && self.x_max <= self.ref_width as f64
            && 0.0 <= self.y_min
            && self.y_min <= self.y_max
            && self.y_max <= self.ref_height as f64;
        if !ok {
            return Err(Error::invalid(format!(
                "box ({}, {}, {}, {}) outside {}x{} reference frame",
                self.x_min, self.y_min, self.x_max, self.y_max, self.ref_width, self.ref_height
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(0.0) * h.max(0.0)
    }
}

/// Rescales `bbox` into the coordinate frame of a `map_w × map_h` feature map.
pub fn scale_bbox_to_map(bbox: &BBox, map_w: u32, map_h: u32) -> Result<BBox> {
    bbox.validate()?;
    if map_w == 0 || map_h == 0 {
        return Err(Error::invalid(format!("feature map size {map_w}x{map_h}")));
    }
    if bbox.ref_width == 0 || bbox.ref_height == 0 {
        return Err(Error::invalid("box reference frame has zero size"));
    }
    let sx = map_w as f64 / bbox.ref_width as f64;
    let sy = map_h as f64 / bbox.ref_height as f64;
    // min() guards against the last ulp pushing x_max past the map edge.
    Ok(BBox {
        x_min: bbox.x_min * sx,
        y_min: bbox.y_min * sy,
        x_max: (bbox.x_max * sx).min(map_w as f64),
        y_max: (bbox.y_max * sy).min(map_h as f64),
        ref_width: map_w,
        ref_height: map_h,
    })
}
