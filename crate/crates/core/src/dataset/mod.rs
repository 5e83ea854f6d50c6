//! Benchmark construction from tracking-video annotations.
//!
//! Each video contributes one query (frame 0, where the target box is given)
//! and a strided sample of its remaining frames as references. A reference is
//! relevant to its own video's query exactly when the target is annotated in
//! that frame.

mod distractors;
mod synthetic;
mod tracking;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::categories::is_coco_category;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::kernels::BBox;

pub use distractors::{
    distractor_features, distractor_image, write_distractor_archive, DistractorSpec,
    InstanceCountDist, DISTRACTOR_INSTANCE_RATIO,
};
pub use synthetic::{synthetic_benchmark, SyntheticBenchmark, SyntheticSpec};
pub use tracking::{load_tracking_video, load_tracking_videos, parse_groundtruth};

/// Target rectangle in tracking convention: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    /// Converts to a [`BBox`] in a `width × height` image, clipping to its bounds.
    pub fn to_bbox(&self, width: u32, height: u32) -> Result<BBox> {
        let clip = |v: f64, hi: u32| v.clamp(0.0, hi as f64);
        BBox::new(
            clip(self.x, width),
            clip(self.y, height),
            clip(self.x + self.w, width),
            clip(self.y + self.h, height),
            width,
            height,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    /// Frame image paths in playback order.
    pub frames: Vec<String>,
    /// Target box per frame; `None` where the target is not annotated.
    pub boxes: Vec<Option<PixelBox>>,
    /// COCO-80 category id, or `None` for a target outside the label set.
    pub category_id: Option<u32>,
}

impl VideoAnnotation {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::Record { id: self.video_id.clone(), reason: reason.into() };
        if self.frames.is_empty() {
            return Err(fail("no frames"));
        }
        if self.boxes.len() != self.frames.len() {
            return Err(fail("box list length differs from frame list length"));
        }
        if self.boxes[0].is_none() {
            return Err(fail("first frame has no target box"));
        }
        if self.category_id.is_some_and(|c| !is_coco_category(c)) {
            return Err(fail("category id outside 1..=80"));
        }
        Ok(())
    }

    pub fn is_coco(&self) -> bool {
        self.category_id.is_some()
    }
}

/// Reference sampling after the query frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrideRule {
    /// Frames 1, 6, 11, …: keep one, skip four.
    #[default]
    KeepOneSkipFour,
    /// Frames 1, 5, 9, …: one frame in every four.
    EveryFourth,
}

impl StrideRule {
    pub fn step(self) -> usize {
        match self {
            StrideRule::KeepOneSkipFour => 5,
            StrideRule::EveryFourth => 4,
        }
    }

    /// Sampled reference frame indices for a video of `n_frames` frames.
    pub fn reference_frames(self, n_frames: usize) -> impl Iterator<Item = usize> {
        (1..n_frames).step_by(self.step())
    }
}

impl fmt::Display for StrideRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrideRule::KeepOneSkipFour => "keep-one-skip-four",
            StrideRule::EveryFourth => "every-fourth",
        })
    }
}

impl FromStr for StrideRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep-one-skip-four" | "5" => Ok(StrideRule::KeepOneSkipFour),
            "every-fourth" | "4" => Ok(StrideRule::EveryFourth),
            _ => Err(Error::invalid(format!("unknown stride rule `{s}`"))),
        }
    }
}

/// Image id of frame `frame` of `video_id`.
pub fn frame_image_id(video_id: &str, frame: usize) -> String {
    format!("{video_id}_{frame:06}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestQuery {
    /// Equal to the image id of the query frame.
    pub query_id: String,
    pub video_id: String,
    pub image_path: String,
    pub bbox: PixelBox,
    pub category_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestReference {
    pub image_id: String,
    pub image_path: String,
    pub video_id: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub stride: StrideRule,
    pub coco_only: bool,
    pub queries: Vec<ManifestQuery>,
    pub references: Vec<ManifestReference>,
    pub ground_truth: GroundTruth,
    /// Videos whose sampled frames never show the target. Their frames stay
    /// in the reference set but they pose no query.
    #[serde(default)]
    pub queryless_videos: Vec<String>,
}

impl BenchmarkManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Builds the query set, reference set and ground truth. Output is sorted by
/// video id, so it does not depend on input order.
pub fn build_manifest(
    videos: &[VideoAnnotation],
    stride: StrideRule,
    coco_only: bool,
) -> Result<BenchmarkManifest> {
    let mut sorted: Vec<&VideoAnnotation> = videos.iter().collect();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].video_id == w[1].video_id) {
        return Err(Error::Record { id: w[0].video_id.clone(), reason: "duplicate video id".into() });
    }
    let mut manifest = BenchmarkManifest {
        stride,
        coco_only,
        queries: Vec::new(),
        references: Vec::new(),
        ground_truth: GroundTruth::default(),
        queryless_videos: Vec::new(),
    };
    let mut kept = 0usize;
    for v in sorted {
        v.validate()?;
        if coco_only && !v.is_coco() {
            continue;
        }
        kept += 1;
        let mut relevant = BTreeSet::new();
        for f in stride.reference_frames(v.frames.len()) {
            let image_id = frame_image_id(&v.video_id, f);
            if v.boxes[f].is_some() {
                relevant.insert(image_id.clone());
            }
            manifest.references.push(ManifestReference {
                image_id,
                image_path: v.frames[f].clone(),
                video_id: v.video_id.clone(),
                frame_index: f,
            });
        }
        if relevant.is_empty() {
            manifest.queryless_videos.push(v.video_id.clone());
            continue;
        }
        let query_id = frame_image_id(&v.video_id, 0);
        manifest.ground_truth.relevant.insert(query_id.clone(), relevant);
        manifest.queries.push(ManifestQuery {
            query_id,
            video_id: v.video_id.clone(),
            image_path: v.frames[0].clone(),
            bbox: v.boxes[0].expect("validated"),
            category_id: v.category_id,
        });
    }
    if kept == 0 {
        return Err(Error::invalid("no videos left after filtering"));
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePositiveHistogram {
    pub per_query: BTreeMap<String, usize>,
    /// True-positive count → number of queries with that count.
    pub buckets: BTreeMap<usize, usize>,
    /// Fraction of queries with more than 20 true positives.
    pub fraction_over_20: f64,
}

pub fn true_positive_histogram(manifest: &BenchmarkManifest) -> TruePositiveHistogram {
    let per_query: BTreeMap<String, usize> =
        manifest.ground_truth.relevant.iter().map(|(q, r)| (q.clone(), r.len())).collect();
    let mut buckets = BTreeMap::new();
    for &n in per_query.values() {
        *buckets.entry(n).or_insert(0) += 1;
    }
    let over = per_query.values().filter(|&&n| n > 20).count();
    let fraction_over_20 = if per_query.is_empty() { 0.0 } else { over as f64 / per_query.len() as f64 };
    TruePositiveHistogram { per_query, buckets, fraction_over_20 }
}
