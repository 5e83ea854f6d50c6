//! Deterministic random inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use instsearch_core::dataset::{BenchmarkManifest, ManifestQuery, ManifestReference, PixelBox, StrideRule};
use instsearch_core::eval::GroundTruth;
use instsearch_core::fmap::save_fmap;
use instsearch_core::{BBox, ConvParams, InstanceDetection, InstanceFeature, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values uniform in `[-1, 1)`.
pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Weights and biases uniform in `[-1, 1)`; `in_channels` is per group.
pub fn random_conv(rng: &mut ChaCha8Rng, out_channels: usize, in_channels: usize, kernel: usize) -> ConvParams {
    let n = out_channels * in_channels * kernel * kernel;
    let weights = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bias = (0..out_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    ConvParams::new(out_channels, in_channels, kernel, weights, bias).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// `n` unit features with ids `inst-00000…`, spread over `images` images and
/// categories `1..=categories`.
pub fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize, categories: u32, images: usize) -> Vec<InstanceFeature> {
    (0..n)
        .map(|i| InstanceFeature {
            instance_id: format!("inst-{i:05}"),
            image_id: format!("img-{:04}", rng.random_range(0..images)),
            category_id: rng.random_range(1..=categories),
            vector: random_unit(rng, dim),
        })
        .collect()
}

/// A small retrieval benchmark stored as FMAP files and detection lines.
///
/// Each object has a per-stage activation signature. Images show one object
/// inside a random box (signature plus noise), over a weaker random
/// background, and may add a second instance of another object.
#[derive(Debug, Clone)]
pub struct PipelineFixture {
    pub objects: usize,
    pub references_per_object: usize,
    /// `(stage name, channel count)`.
    pub stages: Vec<(String, usize)>,
    pub map_size: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for PipelineFixture {
    fn default() -> Self {
        Self {
            objects: 4,
            references_per_object: 3,
            stages: vec![("conv3".into(), 512), ("conv4".into(), 1024)],
            map_size: 6,
            image_size: 96,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureLayout {
    pub query_dir: PathBuf,
    pub reference_dir: PathBuf,
    pub manifest: PathBuf,
    pub query_ids: Vec<String>,
    pub reference_ids: Vec<String>,
}

struct Placed {
    object: usize,
    bbox: BBox,
}

impl PipelineFixture {
    fn category(&self, object: usize) -> u32 {
        [1, 3, 18, 62][object % 4]
    }

    fn write_image(
        &self,
        dir: &Path,
        image_id: &str,
        placed: &[Placed],
        signatures: &[Vec<Vec<f32>>],
        rng: &mut ChaCha8Rng,
    ) {
        let m = self.map_size;
        let scale = m as f64 / self.image_size as f64;
        for (s, (name, channels)) in self.stages.iter().enumerate() {
            let mut t = Tensor3::from_fn(*channels, m, m, |_, _, _| rng.random_range(0.0..0.3));
            for p in placed {
                let xs = (p.bbox.x_min * scale).floor() as usize..(p.bbox.x_max * scale).ceil() as usize;
                let ys = (p.bbox.y_min * scale).floor() as usize..(p.bbox.y_max * scale).ceil() as usize;
                for c in 0..*channels {
                    for y in ys.clone() {
                        for x in xs.clone() {
                            let v = signatures[p.object][s][c] + rng.random_range(0.0..0.15);
                            t.set(c, y, x, t.get(c, y, x).max(v));
                        }
                    }
                }
            }
            save_fmap(dir.join(format!("{image_id}.{name}.fmap")), &t).unwrap();
        }
        let lines: Vec<String> = placed
            .iter()
            .map(|p| {
                let det = InstanceDetection {
                    image_id: image_id.to_string(),
                    category_id: self.category(p.object),
                    bbox: p.bbox,
                    mask: None,
                    det_score: 0.9,
                };
                serde_json::to_string(&det).unwrap()
            })
            .collect();
        fs::write(dir.join(format!("{image_id}.det.jsonl")), lines.join("\n") + "\n").unwrap();
    }

    fn random_box(&self, rng: &mut ChaCha8Rng) -> BBox {
        let s = self.image_size as f64;
        let w = rng.random_range(0.3 * s..0.6 * s);
        let h = rng.random_range(0.3 * s..0.6 * s);
        let x = rng.random_range(0.0..s - w);
        let y = rng.random_range(0.0..s - h);
        BBox::new(x, y, x + w, y + h, self.image_size, self.image_size).unwrap()
    }

    /// Writes `queries/`, `references/` and `manifest.json` under `root`.
    pub fn write(&self, root: &Path) -> FixtureLayout {
        let mut rng = rng(self.seed);
        let query_dir = root.join("queries");
        let reference_dir = root.join("references");
        fs::create_dir_all(&query_dir).unwrap();
        fs::create_dir_all(&reference_dir).unwrap();
        let signatures: Vec<Vec<Vec<f32>>> = (0..self.objects)
            .map(|_| {
                self.stages
                    .iter()
                    .map(|(_, c)| (0..*c).map(|_| rng.random_range(0.2..1.0)).collect())
                    .collect()
            })
            .collect();

        let mut queries = Vec::new();
        let mut references = Vec::new();
        let mut relevant = BTreeMap::new();
        for o in 0..self.objects {
            let video_id = format!("obj{o:02}");
            let query_id = format!("{video_id}_000000");
            let bbox = self.random_box(&mut rng);
            self.write_image(&query_dir, &query_id, &[Placed { object: o, bbox }], &signatures, &mut rng);
            queries.push(ManifestQuery {
                query_id: query_id.clone(),
                video_id: video_id.clone(),
                image_path: format!("{video_id}/0001.jpg"),
                bbox: PixelBox { x: bbox.x_min, y: bbox.y_min, w: bbox.width(), h: bbox.height() },
                category_id: Some(self.category(o)),
            });
            let mut rel = BTreeSet::new();
            for r in 0..self.references_per_object {
                let frame = 1 + 5 * r;
                let image_id = format!("{video_id}_{frame:06}");
                let mut placed = vec![Placed { object: o, bbox: self.random_box(&mut rng) }];
                if self.objects > 1 && rng.random_bool(0.5) {
                    let other = (o + rng.random_range(1..self.objects)) % self.objects;
                    placed.push(Placed { object: other, bbox: self.random_box(&mut rng) });
                }
                self.write_image(&reference_dir, &image_id, &placed, &signatures, &mut rng);
                rel.insert(image_id.clone());
                references.push(ManifestReference {
                    image_id,
                    image_path: format!("{video_id}/{:04}.jpg", frame + 1),
                    video_id: video_id.clone(),
                    frame_index: frame,
                });
            }
            relevant.insert(query_id, rel);
        }
        let query_ids = queries.iter().map(|q| q.query_id.clone()).collect();
        let reference_ids = references.iter().map(|r| r.image_id.clone()).collect();
        let manifest = BenchmarkManifest {
            stride: StrideRule::KeepOneSkipFour,
            coco_only: true,
            queries,
            references,
            ground_truth: GroundTruth { relevant },
            queryless_videos: Vec::new(),
        };
        let manifest_path = root.join("manifest.json");
        manifest.save(&manifest_path).unwrap();
        FixtureLayout { query_dir, reference_dir, manifest: manifest_path, query_ids, reference_ids }
    }
}
