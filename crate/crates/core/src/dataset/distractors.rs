//! Synthetic distractor images: random unit vectors under COCO-80 labels.
//!
//! Image `i` draws from its own ChaCha8 stream (`seed`, stream `i`), so the
//! output does not depend on how generation is sharded and the first `n`
//! images are identical for every larger count.

use std::fs::File;
use std::io::BufWriter;
use std::ops::Range;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categories::category_frequencies;
use crate::error::{Error, Result};
use crate::features::archive::ArchiveWriter;
use crate::features::InstanceFeature;

/// Instances per distractor image at million-image scale: 1,648,654 / 1,000,000.
pub const DISTRACTOR_INSTANCE_RATIO: f64 = 1.648654;

const WRITE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InstanceCountDist {
    Fixed { count: u32 },
    /// One instance plus a Poisson-distributed number of extra ones.
    OnePlusPoisson { extra_mean: f64 },
}

impl Default for InstanceCountDist {
    fn default() -> Self {
        InstanceCountDist::OnePlusPoisson { extra_mean: DISTRACTOR_INSTANCE_RATIO - 1.0 }
    }
}

impl InstanceCountDist {
    pub fn mean(&self) -> f64 {
        match *self {
            InstanceCountDist::Fixed { count } => count as f64,
            InstanceCountDist::OnePlusPoisson { extra_mean } => 1.0 + extra_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub images: usize,
    pub dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub instances: InstanceCountDist,
}

impl DistractorSpec {
    pub fn new(images: usize, dim: usize, seed: u64) -> Self {
        Self { images, dim, seed, instances: InstanceCountDist::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("distractor dimension must be positive"));
        }
        match self.instances {
            InstanceCountDist::OnePlusPoisson { extra_mean } if !(extra_mean > 0.0 && extra_mean.is_finite()) => {
                Err(Error::invalid(format!("Poisson mean {extra_mean} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

struct Sampler {
    categories: WeightedIndex<f64>,
    extra: Option<Poisson<f64>>,
}

impl Sampler {
    fn new(spec: &DistractorSpec) -> Result<Self> {
        spec.validate()?;
        let categories = WeightedIndex::new(category_frequencies())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let extra = match spec.instances {
            InstanceCountDist::Fixed { .. } => None,
            InstanceCountDist::OnePlusPoisson { extra_mean } => {
                Some(Poisson::new(extra_mean).map_err(|e| Error::invalid(e.to_string()))?)
            }
        };
        Ok(Self { categories, extra })
    }

    fn image(&self, spec: &DistractorSpec, index: usize) -> Vec<InstanceFeature> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let count = match (spec.instances, &self.extra) {
            (InstanceCountDist::Fixed { count }, _) => count as usize,
            (_, Some(p)) => 1 + p.sample(&mut rng) as usize,
            (_, None) => unreachable!("sampler built for Poisson counts"),
        };
        let image_id = format!("distractor-{index:07}");
        (0..count)
            .map(|j| {
                let category_id = self.categories.sample(&mut rng) as u32 + 1;
                let raw: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                InstanceFeature {
                    instance_id: format!("{image_id}-{j}"),
                    image_id: image_id.clone(),
                    category_id,
                    vector: raw.iter().map(|v| (v / norm) as f32).collect(),
                }
            })
            .collect()
    }
}

/// Instances of distractor image `index`.
pub fn distractor_image(spec: &DistractorSpec, index: usize) -> Result<Vec<InstanceFeature>> {
    Ok(Sampler::new(spec)?.image(spec, index))
}

/// Instances of the images in `images`, in image order. Generation runs on
/// the current rayon pool.
pub fn distractor_features(spec: &DistractorSpec, images: Range<usize>) -> Result<Vec<InstanceFeature>> {
    let sampler = Sampler::new(spec)?;
    let per_image: Vec<Vec<InstanceFeature>> =
        images.into_par_iter().map(|i| sampler.image(spec, i)).collect();
    Ok(per_image.into_iter().flatten().collect())
}

/// Writes all `spec.images` images to a feature archive; returns the instance count.
pub fn write_distractor_archive(path: impl AsRef<Path>, spec: &DistractorSpec, stages: &[String]) -> Result<u64> {
    let sampler = Sampler::new(spec)?;
    let mut w = ArchiveWriter::new(BufWriter::new(File::create(path)?), spec.dim, stages)?;
    for start in (0..spec.images).step_by(WRITE_CHUNK) {
        let end = (start + WRITE_CHUNK).min(spec.images);
        let chunk: Vec<Vec<InstanceFeature>> =
            (start..end).into_par_iter().map(|i| sampler.image(spec, i)).collect();
        for f in chunk.iter().flatten() {
            w.push(f)?;
        }
    }
    let count = w.count();
    w.finish()?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_prefix_nested() {
        let spec = DistractorSpec::new(40, 16, 7);
        let a = distractor_features(&spec, 0..40).unwrap();
        let b = distractor_features(&spec, 0..40).unwrap();
        assert_eq!(a, b);
        let head = distractor_features(&spec, 0..10).unwrap();
        assert_eq!(&a[..head.len()], &head[..]);
        let tail = distractor_features(&spec, 10..40).unwrap();
        assert_eq!(&a[head.len()..], &tail[..]);
        let other = distractor_features(&DistractorSpec::new(40, 16, 8), 0..40).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn unit_vectors_and_valid_labels() {
        let spec = DistractorSpec::new(200, 64, 1);
        let fs = distractor_features(&spec, 0..200).unwrap();
        assert!(fs.iter().all(|f| f.is_unit() && (1..=80).contains(&f.category_id) && f.dim() == 64));
        let images: std::collections::BTreeSet<_> = fs.iter().map(|f| f.image_id.as_str()).collect();
        assert_eq!(images.len(), 200);
    }

    #[test]
    fn fixed_count() {
        let mut spec = DistractorSpec::new(5, 4, 0);
        spec.instances = InstanceCountDist::Fixed { count: 3 };
        assert_eq!(distractor_features(&spec, 0..5).unwrap().len(), 15);
        assert!(DistractorSpec::new(1, 0, 0).validate().is_err());
    }

    #[test]
    fn archive_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let spec = DistractorSpec::new(10, 8, 3);
        let n = write_distractor_archive(&path, &spec, &[]).unwrap();
        let (header, recs) = crate::features::archive::read_archive(&path).unwrap();
        assert_eq!(header.count, n);
        assert_eq!(recs, distractor_features(&spec, 0..10).unwrap());
    }
}
