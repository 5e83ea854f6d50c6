use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use instsearch_core::dataset::{BenchmarkManifest, PixelBox};
use instsearch_core::features::archive::ArchiveWriter;
use instsearch_core::features::parse_detections;
use instsearch_core::fmap::load_fmap;
use instsearch_core::{BBox, FeatureExtractor, InstanceDetection, InstanceFeature, Tensor3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{ErrorReport, Failure};

pub const FEATURES_FILE: &str = "features.bin";
pub const EXTRACT_REPORT_FILE: &str = "extract_report.json";

const DET_SUFFIX: &str = ".det.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub kind: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub images: usize,
    pub features: u64,
    pub dim: usize,
    pub stages: Vec<String>,
    pub archive: PathBuf,
    pub failures: Vec<ImageFailure>,
}

impl ExtractReport {
    pub fn summary(&self) -> String {
        format!(
            "extracted {} features (dim {}) from {} images, {} failed",
            self.features,
            self.dim,
            self.images,
            self.failures.len()
        )
    }
}

/// Image ids with a detection file in `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(DET_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 { inter / union } else { 0.0 }
}

/// Index of the detection that best overlaps the query box; ties keep the earliest.
fn query_detection(dets: &[InstanceDetection], query: &PixelBox) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in dets.iter().enumerate() {
        let target = query.to_bbox(d.bbox.ref_width, d.bbox.ref_height)?;
        let score = iou(&d.bbox, &target);
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Failure::new("missing", "no detections in query image").into())
}

struct Extraction<'a> {
    config: &'a RunConfig,
    fmap_dir: &'a Path,
    det_dir: &'a Path,
    extractor: FeatureExtractor,
    query_boxes: Option<BTreeMap<String, PixelBox>>,
}

impl Extraction<'_> {
    fn image(&self, image_id: &str) -> Result<Vec<InstanceFeature>> {
        let det_path = self.det_dir.join(format!("{image_id}{DET_SUFFIX}"));
        let text = fs::read_to_string(&det_path).with_context(|| format!("reading {}", det_path.display()))?;
        let dets = parse_detections(&text).with_context(|| format!("parsing {}", det_path.display()))?;
        if let Some(d) = dets.iter().find(|d| d.image_id != image_id) {
            return Err(Failure::new("record", format!("{} lists image `{}`", det_path.display(), d.image_id)).into());
        }
        let selected: Vec<usize> = match &self.query_boxes {
            Some(boxes) => {
                let query = boxes
                    .get(image_id)
                    .ok_or_else(|| Failure::new("missing", format!("`{image_id}` is not a manifest query")))?;
                vec![query_detection(&dets, query)?]
            }
            None => (0..dets.len()).collect(),
        };
        if selected.is_empty() {
            return Ok(Vec::new());
        }
        let stages = self
            .config
            .stages
            .iter()
            .map(|s| {
                let path = self.fmap_dir.join(format!("{image_id}.{s}.fmap"));
                let t = load_fmap(&path).with_context(|| format!("loading {}", path.display()))?;
                Ok((s.clone(), t))
            })
            .collect::<Result<Vec<(String, Tensor3)>>>()?;
        selected
            .into_iter()
            .map(|i| {
                let id = format!("{image_id}#{i}");
                self.extractor.extract(&stages, &dets[i], &id).with_context(|| format!("instance {id}"))
            })
            .collect()
    }
}

/// Extracts one feature per detection of every image under the configured
/// directories and writes `features.bin` plus `extract_report.json`.
/// A failing image is recorded in the report and skipped.
pub fn cmd_extract(config: &RunConfig) -> Result<ExtractReport> {
    let fmap_dir = config.require(&config.fmap_dir, "feature map directory")?;
    let det_dir = config.det_dir().unwrap_or(fmap_dir);
    let query_boxes = if config.query_mode {
        let manifest_path = config.require(&config.manifest, "manifest")?;
        let m = BenchmarkManifest::load(manifest_path)
            .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
        Some(m.queries.into_iter().map(|q| (q.query_id, q.bbox)).collect())
    } else {
        None
    };
    let job = Extraction {
        config,
        fmap_dir,
        det_dir,
        extractor: FeatureExtractor { stage_selection: config.stages.clone(), mask_pooling: config.mask_pooling },
        query_boxes,
    };
    let images = list_images(det_dir)?;
    let results: Vec<Result<Vec<InstanceFeature>>> = images.par_iter().map(|id| job.image(id)).collect();

    let mut failures = Vec::new();
    let mut accepted = Vec::new();
    let mut dim = None;
    for (image_id, r) in images.iter().zip(results) {
        let r = r.and_then(|fs| match (dim, fs.first()) {
            (Some(d), Some(f)) if f.dim() != d => Err(Failure::new(
                "shape",
                format!("feature dimension {} differs from {d} of earlier images", f.dim()),
            )
            .into()),
            _ => Ok(fs),
        });
        match r {
            Ok(fs) => {
                if let Some(f) = fs.first() {
                    dim.get_or_insert(f.dim());
                }
                accepted.extend(fs);
            }
            Err(e) => {
                let report = ErrorReport::from_anyhow(&e);
                failures.push(ImageFailure { image_id: image_id.clone(), kind: report.kind.into(), error: report.error });
            }
        }
    }

    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let archive = config.out_path(FEATURES_FILE);
    let dim = dim.unwrap_or(0);
    let file = File::create(&archive).with_context(|| format!("creating {}", archive.display()))?;
    let mut writer = ArchiveWriter::new(BufWriter::new(file), dim, &config.stages)?;
    for f in &accepted {
        writer.push(f)?;
    }
    let features = writer.count();
    writer.finish()?;

    let report = ExtractReport { images: images.len(), features, dim, stages: config.stages.clone(), archive, failures };
    let report_path = config.out_path(EXTRACT_REPORT_FILE);
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    Ok(report)
}
