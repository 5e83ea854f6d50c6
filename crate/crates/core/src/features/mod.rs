//! Hybrid instance features: per-stage ROI max pooling, per-stage L2
//! normalization, concatenation in the listed stage order, and a final L2
//! normalization of the concatenated vector.

pub mod archive;

use serde::{Deserialize, Serialize};

use crate::categories::is_coco_category;
use crate::error::{Error, Result};
use crate::kernels::{roi_max_pool, roi_max_pool_masked, scale_bbox_to_map, BBox};
use crate::mask::{Rle, RleJson};
use crate::tensor::Tensor3;

/// Stage pair that gives the default 512 + 1024 = 1536-dimensional feature.
pub const DEFAULT_STAGES: [&str; 2] = ["conv3", "conv4"];

/// Allowed deviation of a stored feature's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// One segmenter output, as stored in `<image_id>.det.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDetection {
    pub image_id: String,
    pub category_id: u32,
    /// Box in image pixels; `ref_width`/`ref_height` are the image size.
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleJson>,
    pub det_score: f64,
}

impl InstanceDetection {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Record { id: self.image_id.clone(), reason };
        if !is_coco_category(self.category_id) {
            return Err(fail(format!("category {} is not a COCO-80 label", self.category_id)));
        }
        self.bbox.validate().map_err(|e| fail(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.det_score) {
            return Err(fail(format!("detection score {} outside [0, 1]", self.det_score)));
        }
        if let Some(m) = &self.mask {
            if m.size != [self.bbox.ref_height, self.bbox.ref_width] {
                return Err(fail(format!(
                    "mask size {:?} differs from image size {}x{}",
                    m.size, self.bbox.ref_height, self.bbox.ref_width
                )));
            }
        }
        Ok(())
    }

    pub fn decoded_mask(&self) -> Result<Option<Rle>> {
        self.mask.as_ref().map(Rle::from_json).transpose()
    }
}

/// Unit-norm feature vector with identity and category metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeature {
    pub instance_id: String,
    pub image_id: String,
    pub category_id: u32,
    pub vector: Vec<f32>,
}

impl InstanceFeature {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }
}

/// `v / ‖v‖₂`; an all-zero vector is returned unchanged.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(Error::invalid("cannot normalize an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector to normalize".into()));
    }
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureExtractor {
    pub stage_selection: Vec<String>,
    /// Zero activations outside the instance mask before pooling. Off by default:
    /// pooling covers the whole detector box.
    pub mask_pooling: bool,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(DEFAULT_STAGES.iter().map(|s| s.to_string()).collect())
    }
}

impl FeatureExtractor {
    pub fn new(stage_selection: Vec<String>) -> Self {
        Self { stage_selection, mask_pooling: false }
    }

    /// Pools each selected stage under the detection box and builds the hybrid vector.
    pub fn extract(
        &self,
        stages: &[(String, Tensor3)],
        det: &InstanceDetection,
        instance_id: &str,
    ) -> Result<InstanceFeature> {
        if self.stage_selection.is_empty() {
            return Err(Error::invalid("no stages selected"));
        }
        det.validate()?;
        let mask = if self.mask_pooling { det.decoded_mask()? } else { None };

        let mut vector = Vec::new();
        for name in &self.stage_selection {
            let maps = stages
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Missing(format!("stage `{name}` for image `{}`", det.image_id)))?;
            let pooled = pool_stage(maps, det, mask.as_ref()).map_err(|e| Error::Stage {
                stage: name.clone(),
                source: Box::new(e),
            })?;
            vector.extend(l2_normalize(&pooled)?);
        }
        let vector = l2_normalize(&vector)?;
        let feature = InstanceFeature {
            instance_id: instance_id.to_string(),
            image_id: det.image_id.clone(),
            category_id: det.category_id,
            vector,
        };
        if !feature.is_unit() {
            return Err(Error::Record {
                id: feature.instance_id,
                reason: "all pooled activations are zero".into(),
            });
        }
        Ok(feature)
    }
}

fn pool_stage(maps: &Tensor3, det: &InstanceDetection, mask: Option<&Rle>) -> Result<Vec<f32>> {
    let (w, h) = (maps.width() as u32, maps.height() as u32);
    let roi = scale_bbox_to_map(&det.bbox, w, h)?;
    match mask {
        Some(m) => roi_max_pool_masked(maps, &roi, &m.to_grid(w as usize, h as usize)),
        None => roi_max_pool(maps, &roi),
    }
}

/// Extracts one detection's hybrid feature. `det.bbox` must be expressed in the
/// `image_w × image_h` frame.
pub fn extract_instance_feature(
    stages: &[(String, Tensor3)],
    det: &InstanceDetection,
    image_w: u32,
    image_h: u32,
    stage_selection: &[String],
    instance_id: &str,
) -> Result<InstanceFeature> {
    if (det.bbox.ref_width, det.bbox.ref_height) != (image_w, image_h) {
        return Err(Error::shape(format!(
            "detection box frame {}x{} differs from image {image_w}x{image_h}",
            det.bbox.ref_width, det.bbox.ref_height
        )));
    }
    FeatureExtractor::new(stage_selection.to_vec()).extract(stages, det, instance_id)
}

/// Reads a `.det.jsonl` stream: one detection per non-blank line.
pub fn parse_detections(text: &str) -> Result<Vec<InstanceDetection>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let det: InstanceDetection = serde_json::from_str(line)
                .map_err(|e| Error::format("detections", format!("line {}: {e}", i + 1)))?;
            det.validate()?;
            Ok(det)
        })
        .collect()
}
