use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use instsearch_core::dataset::{DistractorSpec, InstanceCountDist, StrideRule, SyntheticSpec};
use instsearch_core::eval::{validate_cutoffs, Cutoff, DEFAULT_CUTOFFS};
use instsearch_core::features::DEFAULT_STAGES;
use serde::{Deserialize, Serialize};

use crate::error::Failure;

/// Distractor generation settings. The seed comes from [`RunConfig::seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistractorConfig {
    pub images: usize,
    pub dim: usize,
    pub instances: InstanceCountDist,
}

impl DistractorConfig {
    pub fn spec(&self, images: usize, seed: u64) -> DistractorSpec {
        DistractorSpec { images, dim: self.dim, seed, instances: self.instances }
    }
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self {
            images: 10_000,
            dim: 1536,
            instances: InstanceCountDist::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    /// Distractor image counts to sweep.
    pub counts: Vec<usize>,
    /// Number of seeds, starting at [`RunConfig::seed`].
    pub repeats: usize,
    pub k: usize,
    pub svg: bool,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self { counts: vec![0, 10_000, 100_000, 1_000_000], repeats: 1, k: 50, svg: true }
    }
}

/// Everything a command needs. Loaded from an optional JSON file, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stages: Vec<String>,
    pub mask_pooling: bool,
    /// Restrict each search to the query's category.
    pub prune: bool,
    pub ks: Vec<Cutoff>,
    /// Distinct images returned per query; defaults to the largest cutoff.
    pub depth: Option<usize>,

    /// Directory of `<image_id>.<stage>.fmap` files.
    pub fmap_dir: Option<PathBuf>,
    /// Directory of `<image_id>.det.jsonl` files; defaults to `fmap_dir`.
    pub det_dir: Option<PathBuf>,
    /// Keep only the detection matching each manifest query box.
    pub query_mode: bool,
    pub manifest: Option<PathBuf>,
    /// Reference feature archives.
    pub features: Vec<PathBuf>,
    /// Query feature archive, one instance per query image.
    pub queries: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub results: Option<PathBuf>,
    /// Query ids to evaluate, one per line.
    pub subset: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub tracking_root: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub stride: StrideRule,
    pub coco_only: bool,

    pub distractors: DistractorConfig,
    pub scale: ScaleConfig,

    pub seed: u64,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stages: DEFAULT_STAGES.iter().map(|s| s.to_string()).collect(),
            mask_pooling: false,
            prune: false,
            ks: DEFAULT_CUTOFFS.to_vec(),
            depth: None,
            fmap_dir: None,
            det_dir: None,
            query_mode: false,
            manifest: None,
            features: Vec::new(),
            queries: None,
            index: None,
            results: None,
            subset: None,
            out_dir: PathBuf::from("out"),
            tracking_root: None,
            synthetic: None,
            stride: StrideRule::default(),
            coco_only: true,
            distractors: DistractorConfig::default(),
            scale: ScaleConfig::default(),
            seed: 0,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        validate_cutoffs(&self.ks)?;
        if self.stages.is_empty() {
            return Err(Failure::usage("no feature stages selected").into());
        }
        if self.threads == Some(0) {
            return Err(Failure::usage("thread count must be at least 1").into());
        }
        Ok(())
    }

    /// Image-level search depth: explicit `depth`, else the largest finite
    /// cutoff, else everything.
    pub fn search_depth(&self) -> usize {
        if let Some(d) = self.depth {
            return d;
        }
        match self.ks.last() {
            Some(Cutoff::All) | None => usize::MAX,
            Some(k) => k.limit(),
        }
    }

    pub fn det_dir(&self) -> Option<&Path> {
        self.det_dir.as_deref().or(self.fmap_dir.as_deref())
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Returns a required path, checking that it exists.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        let p = path.as_deref().ok_or_else(|| Failure::usage(format!("no {what} given")))?;
        if !p.exists() {
            return Err(Failure::new("missing", format!("{what} {} does not exist", p.display())).into());
        }
        Ok(p)
    }
}
