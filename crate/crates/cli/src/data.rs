use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use instsearch_core::dataset::{
    build_manifest, load_tracking_videos, synthetic_benchmark, true_positive_histogram, write_distractor_archive,
    TruePositiveHistogram,
};
use instsearch_core::features::archive::write_archive;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTOGRAM_FILE: &str = "tp_histogram.json";
pub const QUERY_FEATURES_FILE: &str = "queries.bin";
pub const REFERENCE_FEATURES_FILE: &str = "references.bin";
pub const DISTRACTORS_FILE: &str = "distractors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub manifest: PathBuf,
    pub queries: usize,
    pub references: usize,
    pub histogram: TruePositiveHistogram,
    /// Query and reference archives, written for synthetic benchmarks only.
    pub feature_archives: Option<(PathBuf, PathBuf)>,
}

/// Builds `manifest.json` and `tp_histogram.json` from tracking-benchmark
/// directories or, when a synthetic spec is configured, from generated
/// videos. Synthetic runs also write `queries.bin` and `references.bin`.
pub fn cmd_build_manifest(config: &RunConfig) -> Result<ManifestSummary> {
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let (manifest, feature_archives) = match (&config.synthetic, &config.tracking_root) {
        (Some(_), Some(_)) => {
            return Err(Failure::usage("give either a tracking root or a synthetic spec, not both").into())
        }
        (Some(spec), None) => {
            let mut spec = spec.clone();
            spec.seed = config.seed;
            spec.stride = config.stride;
            spec.coco_only = config.coco_only;
            let bench = synthetic_benchmark(&spec)?;
            let stages = vec![format!("synthetic-{}", spec.dim)];
            let q = config.out_path(QUERY_FEATURES_FILE);
            let r = config.out_path(REFERENCE_FEATURES_FILE);
            write_archive(&q, spec.dim, &stages, bench.queries)?;
            write_archive(&r, spec.dim, &stages, bench.references)?;
            (bench.manifest, Some((q, r)))
        }
        (None, Some(_)) => {
            let root = config.require(&config.tracking_root, "tracking root")?;
            let videos = load_tracking_videos(root).with_context(|| format!("loading videos under {}", root.display()))?;
            (build_manifest(&videos, config.stride, config.coco_only)?, None)
        }
        (None, None) => return Err(Failure::usage("no tracking root or synthetic spec given").into()),
    };
    let path = config.out_path(MANIFEST_FILE);
    manifest.save(&path)?;
    let histogram = true_positive_histogram(&manifest);
    fs::write(config.out_path(HISTOGRAM_FILE), serde_json::to_string_pretty(&histogram)? + "\n")?;
    Ok(ManifestSummary {
        manifest: path,
        queries: manifest.queries.len(),
        references: manifest.references.len(),
        histogram,
        feature_archives,
    })
}

/// Writes `distractors.bin` and returns its path and instance count.
pub fn cmd_gen_distractors(config: &RunConfig) -> Result<(PathBuf, u64)> {
    if config.distractors.images == 0 {
        return Err(Failure::usage("distractor image count must be at least 1").into());
    }
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let spec = config.distractors.spec(config.distractors.images, config.seed);
    let path = config.out_path(DISTRACTORS_FILE);
    let n = write_distractor_archive(&path, &spec, &[format!("distractor-{}", spec.dim)])?;
    Ok((path, n))
}
