//! Synthetic benchmarks with known ground truth.
//!
//! Feature model: an instance of category `c` seen in video `v` has feature
//! `normalize(a·C_c + P_v + n·G)`, with `C_c`, `P_v`, `G` independent random
//! unit directions, `a` the category weight and `n` a per-frame noise level.
//! The query frame uses `n = tp_noise / 4`; reference frames draw
//! `n = tp_noise · exp(z)`, `z ~ N(0, 1)`, so a few frames are hard to match.
//! Reference frames also carry clutter instances from other objects.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_manifest, frame_image_id, BenchmarkManifest, PixelBox, StrideRule, VideoAnnotation};
use crate::categories::{category_frequencies, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::features::InstanceFeature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub dim: usize,
    pub tp_noise: f64,
    pub category_weight: f64,
    /// Probability that the target is missing from a non-query frame.
    pub absent_rate: f64,
    /// Clutter instances per reference frame, drawn uniformly from `0..=max_clutter`.
    pub max_clutter: u32,
    /// Fraction of videos whose target is outside COCO-80.
    pub other_rate: f64,
    pub stride: StrideRule,
    pub coco_only: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            videos: 160,
            min_frames: 100,
            max_frames: 644,
            dim: 1536,
            tp_noise: 1.0,
            category_weight: 1.0,
            absent_rate: 0.05,
            max_clutter: 1,
            other_rate: 0.0,
            stride: StrideRule::default(),
            coco_only: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub videos: Vec<VideoAnnotation>,
    pub manifest: BenchmarkManifest,
    /// One feature per manifest query; `image_id` is the query id.
    pub queries: Vec<InstanceFeature>,
    /// Every instance of every reference image, in manifest order.
    pub references: Vec<InstanceFeature>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn mix(category: &[f64], a: f64, identity: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let g = random_unit(rng, identity.len());
    let v: Vec<f64> = (0..identity.len()).map(|i| a * category[i] + identity[i] + noise * g[i]).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

pub fn synthetic_benchmark(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    if spec.videos == 0 || spec.dim == 0 || spec.min_frames == 0 || spec.min_frames > spec.max_frames {
        return Err(Error::invalid("synthetic spec needs videos, dim and a frame range"));
    }
    let labels = WeightedIndex::new(category_frequencies()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut dir_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions: Vec<Vec<f64>> = (0..NUM_CATEGORIES).map(|_| random_unit(&mut dir_rng, spec.dim)).collect();

    let mut videos = Vec::with_capacity(spec.videos);
    // Per video: the label its features carry and its identity direction.
    let mut looks = Vec::with_capacity(spec.videos);
    for v in 0..spec.videos {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(v as u64 + 1);
        let video_id = format!("video-{v:04}");
        let n = rng.random_range(spec.min_frames..=spec.max_frames);
        let label = labels.sample(&mut rng) as u32 + 1;
        let category_id = (!rng.random_bool(spec.other_rate)).then_some(label);
        let (w, h) = (rng.random_range(20.0..80.0), rng.random_range(20.0..80.0));
        let boxes = (0..n)
            .map(|f| {
                let present = f == 0 || !rng.random_bool(spec.absent_rate);
                present.then_some(PixelBox { x: 10.0 + (f % 50) as f64, y: 20.0, w, h })
            })
            .collect();
        let frames = (0..n).map(|f| format!("{video_id}/img/{:04}.jpg", f + 1)).collect();
        videos.push(VideoAnnotation { video_id, frames, boxes, category_id });
        looks.push((label, random_unit(&mut rng, spec.dim), rng));
    }

    let manifest = build_manifest(&videos, spec.stride, spec.coco_only)?;
    let index_of = |id: &str| videos.iter().position(|v| v.video_id == id).expect("video in manifest");

    let a = spec.category_weight;
    let mut queries = Vec::with_capacity(manifest.queries.len());
    for q in &manifest.queries {
        let (label, identity, rng) = &mut looks[index_of(&q.video_id)];
        let vector = mix(&directions[*label as usize - 1], a, identity, spec.tp_noise / 4.0, rng);
        queries.push(InstanceFeature {
            instance_id: format!("{}#0", q.query_id),
            image_id: q.query_id.clone(),
            category_id: *label,
            vector,
        });
    }

    let mut references = Vec::new();
    for r in &manifest.references {
        let vi = index_of(&r.video_id);
        let present = videos[vi].boxes[r.frame_index].is_some();
        let (label, identity, rng) = &mut looks[vi];
        let image_id = frame_image_id(&r.video_id, r.frame_index);
        debug_assert_eq!(image_id, r.image_id);
        let mut j = 0;
        if present {
            let noise = spec.tp_noise * rng.sample::<f64, _>(StandardNormal).exp();
            references.push(InstanceFeature {
                instance_id: format!("{image_id}#{j}"),
                image_id: image_id.clone(),
                category_id: *label,
                vector: mix(&directions[*label as usize - 1], a, identity, noise, rng),
            });
            j += 1;
        }
        let clutter = rng.random_range(0..=spec.max_clutter);
        for _ in 0..clutter {
            let c = labels.sample(rng) as u32 + 1;
            let other = random_unit(rng, spec.dim);
            let noise = spec.tp_noise * rng.sample::<f64, _>(StandardNormal).exp();
            references.push(InstanceFeature {
                instance_id: format!("{image_id}#{j}"),
                image_id: image_id.clone(),
                category_id: c,
                vector: mix(&directions[c as usize - 1], a, &other, noise, rng),
            });
            j += 1;
        }
    }
    Ok(SyntheticBenchmark { videos, manifest, queries, references })
}
