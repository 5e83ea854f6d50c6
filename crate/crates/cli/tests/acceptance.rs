//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass a substring to run a subset.

// `!(x <= tol)` is deliberate: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use instsearch_cli::data::cmd_build_manifest;
use instsearch_cli::extract::cmd_extract;
use instsearch_cli::pipeline::{cmd_eval, cmd_index, cmd_search, run_queries};
use instsearch_cli::scale::{cmd_scale_with, ScaleRow};
use instsearch_cli::{with_pool, RunConfig};
use instsearch_core::dataset::{
    build_manifest, distractor_features, synthetic_benchmark, true_positive_histogram, PixelBox, StrideRule,
    SyntheticSpec, VideoAnnotation,
};
use instsearch_core::eval::{
    ap_at_iou, average_precision_at_k, map_at_k, map_r, Cutoff, GtInstance, QueryResult, Region, ScoredInstance,
    DEFAULT_CUTOFFS,
};
use instsearch_core::index::IndexBuilder;
use instsearch_core::kernels::{
    deformable_conv2d, deformable_grouped_conv2d, grouped_conv2d, resnext_block_forward, roi_max_pool,
    DeformConvParams, ResNeXtBlockParams,
};
use instsearch_core::{build_index, conv2d, extract_instance_feature, BBox, ConvParams, InstanceDetection, Tensor3};
use instsearch_testkit::fixtures::{random_conv, random_tensor, rng, PipelineFixture};
use instsearch_testkit::kernels as oracle;
use instsearch_testkit::metrics::ap_term_by_term;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const KERNEL_TOL: f32 = 1e-5;
const KERNEL_INSTANCES: usize = 100;
const KERNEL_BUDGET_SECS: f64 = 60.0;
const ZERO_OFFSET_TOL: f32 = 1e-6;
const UNIT_NORM_TOL: f64 = 1e-5;
const SCALE_INVARIANCE_TOL: f32 = 1e-6;
const AP_TOL: f64 = 1e-12;
const MAX_RANKING: usize = 8;
const CONSISTENCY_RANGE: (f64, f64) = (0.5, 2.0);
const TARGET_REFERENCES: f64 = 11_885.0;
const SCALE_SEEDS: usize = 5;
const SCALE_BUDGET_SECS: f64 = 600.0;
const SCALE_COUNTS: [usize; 4] = [0, 1_000, 10_000, 100_000];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:#}"))
}

fn max_abs_diff(a: &Tensor3, b: &Tensor3) -> f32 {
    if a.shape() != b.shape() {
        return f32::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn random_offsets(r: &mut ChaCha8Rng, c_in: usize, conv: &ConvParams) -> ConvParams {
    let k = conv.kernel();
    let raw = random_conv(r, 2 * k * k, c_in, k);
    let weights = raw.weights().iter().map(|w| w * 0.4).collect();
    let bias = raw.bias().iter().map(|b| b * 1.5).collect();
    ConvParams::new(2 * k * k, c_in, k, weights, bias)
        .unwrap()
        .with_stride(conv.stride)
        .with_padding(conv.padding)
        .with_dilation(conv.dilation)
}

fn kernel_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = [0.0f32; 4];
    let mut counts = [0usize; 4];

    while counts[0] < 120 {
        let (c, h, w) = (r.random_range(1..=8), r.random_range(5..=16), r.random_range(5..=16));
        let k = [1, 3, 5][r.random_range(0..3)];
        let out = r.random_range(1..=6);
        let (stride, pad, dil) = (r.random_range(1..=2), r.random_range(0..=k / 2 + 1), if k > 1 { r.random_range(1..=2) } else { 1 });
        let p = random_conv(&mut r, out, c, k).with_stride(stride).with_padding(pad).with_dilation(dil);
        if p.output_size(h, w).is_err() {
            continue;
        }
        let x = random_tensor(&mut r, c, h, w);
        worst[0] = worst[0].max(max_abs_diff(&ok(conv2d(&x, &p))?, &oracle::conv2d(&x, &p)));
        counts[0] += 1;
    }

    for i in 0..120 {
        let groups = [1, 2, 4, 8][i % 4];
        let c_in = groups * r.random_range(1..=8 / groups);
        let c_out = groups * r.random_range(1..=2);
        let (h, w) = (r.random_range(4..=16), r.random_range(4..=16));
        let p = random_conv(&mut r, c_out, c_in / groups, 3).with_padding(1);
        let x = random_tensor(&mut r, c_in, h, w);
        let got = ok(grouped_conv2d(&x, &p, groups))?;
        worst[1] = worst[1].max(max_abs_diff(&got, &oracle::grouped_conv2d(&x, &p, groups)));
        counts[1] += 1;
    }

    for _ in 0..120 {
        let (c, h, w) = (r.random_range(1..=8), r.random_range(1..=16), r.random_range(1..=16));
        let maps = random_tensor(&mut r, c, h, w);
        let (wf, hf) = (w as f64, h as f64);
        let x0 = r.random_range(0.0..wf);
        let y0 = r.random_range(0.0..hf);
        let x1 = r.random_range(x0..=wf);
        let y1 = r.random_range(y0..=hf);
        let roi = ok(BBox::new(x0, y0, x1, y1, w as u32, h as u32))?;
        let got = ok(roi_max_pool(&maps, &roi))?;
        let want = oracle::roi_max_pool(&maps, &roi).ok_or("oracle found no covered cell")?;
        ensure!(got.len() == want.len(), "roi pool length {} vs {}", got.len(), want.len());
        let d = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        worst[2] = worst[2].max(d);
        counts[2] += 1;
    }

    for i in 0..120 {
        let groups = [1, 2][i % 2];
        let c_in = groups * r.random_range(1..=8 / groups);
        let c_out = groups * r.random_range(1..=3);
        let (h, w) = (r.random_range(4..=16), r.random_range(4..=16));
        let k = [1, 3][r.random_range(0..2)];
        let stride = if r.random_bool(0.3) { 2 } else { 1 };
        let conv = random_conv(&mut r, c_out, c_in / groups, k).with_padding(k / 2).with_stride(stride);
        let off = random_offsets(&mut r, c_in, &conv);
        let x = random_tensor(&mut r, c_in, h, w);
        let params = ok(DeformConvParams::new(conv.clone(), off.clone()))?;
        let got = ok(deformable_grouped_conv2d(&x, &params, groups))?;
        worst[3] = worst[3].max(max_abs_diff(&got, &oracle::deformable_conv2d(&x, &conv, &off, groups)));
        counts[3] += 1;
    }

    let secs = start.elapsed().as_secs_f64();
    let names = ["conv2d", "grouped_conv2d", "roi_max_pool", "deformable_conv2d"];
    for i in 0..4 {
        ensure!(counts[i] >= KERNEL_INSTANCES, "{} ran only {} instances", names[i], counts[i]);
        ensure!(worst[i] <= KERNEL_TOL, "{} max abs error {:e} > {KERNEL_TOL:e}", names[i], worst[i]);
    }
    ensure!(secs < KERNEL_BUDGET_SECS, "took {secs:.1} s");
    Ok(format!(
        "{:?} instances, max abs errors {:.1e}/{:.1e}/{:.1e}/{:.1e}, {secs:.2} s",
        counts, worst[0], worst[1], worst[2], worst[3]
    ))
}

fn degeneracy_identities() -> Outcome {
    let mut r = rng(102);
    let mut worst_zero_offset = 0.0f32;
    for _ in 0..50 {
        let c = r.random_range(1..=8);
        let out = r.random_range(1..=4);
        let (h, w) = (r.random_range(3..=16), r.random_range(3..=16));
        let conv = random_conv(&mut r, out, c, 3).with_padding(1);
        let x = random_tensor(&mut r, c, h, w);
        let d = ok(deformable_conv2d(&x, &ok(DeformConvParams::with_zero_offsets(conv.clone(), c))?))?;
        worst_zero_offset = worst_zero_offset.max(max_abs_diff(&d, &ok(conv2d(&x, &conv))?));

        let g = ok(grouped_conv2d(&x, &conv, 1))?;
        ensure!(g == ok(conv2d(&x, &conv))?, "groups=1 differs from dense conv");
    }
    ensure!(worst_zero_offset <= ZERO_OFFSET_TOL, "zero offsets differ from conv by {worst_zero_offset:e}");

    for (channels, mid, card) in [(8, 4, 2), (16, 8, 4), (64, 32, 32)] {
        for deformable in [false, true] {
            let block = ok(ResNeXtBlockParams::zeros(channels, mid, channels, card, deformable))?;
            let x = random_tensor(&mut r, channels, 7, 5);
            ensure!(ok(resnext_block_forward(&x, &block))? == x.relu(), "zero-weight block differs from ReLU(x)");
        }
    }
    Ok(format!("zero-offset max error {worst_zero_offset:.1e}; groups=1 and zero-weight blocks exact"))
}

fn feature_contract() -> Outcome {
    let mut r = rng(103);
    let selection = vec!["conv3".to_string(), "conv4".to_string()];
    let mut worst_norm = 0.0f64;
    let mut worst_scale = 0.0f32;
    for i in 0..20 {
        let size = r.random_range(4..=12);
        let stages = vec![
            ("conv3".to_string(), random_tensor(&mut r, 512, size, size).map(f32::abs)),
            ("conv4".to_string(), random_tensor(&mut r, 1024, size / 2 + 1, size / 2 + 1).map(f32::abs)),
        ];
        let x0 = r.random_range(0.0..150.0);
        let y0 = r.random_range(0.0..150.0);
        let det = InstanceDetection {
            image_id: format!("img{i}"),
            category_id: 1,
            bbox: ok(BBox::new(x0, y0, x0 + r.random_range(5.0..90.0), y0 + r.random_range(5.0..90.0), 256, 256))?,
            mask: None,
            det_score: 0.9,
        };
        let f = ok(extract_instance_feature(&stages, &det, 256, 256, &selection, "x"))?;
        ensure!(f.dim() == 1536, "dimension {}", f.dim());
        worst_norm = worst_norm.max((f.norm() - 1.0).abs());
        for lambda in [0.01f32, 1.0, 100.0] {
            for which in [Some(0), Some(1), None] {
                let scaled: Vec<_> = stages
                    .iter()
                    .enumerate()
                    .map(|(s, (n, t))| (n.clone(), if which.map_or(true, |w| w == s) { t.map(|v| v * lambda) } else { t.clone() }))
                    .collect();
                let g = ok(extract_instance_feature(&scaled, &det, 256, 256, &selection, "x"))?;
                let d = f.vector.iter().zip(&g.vector).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
                worst_scale = worst_scale.max(d);
            }
        }
    }
    ensure!(worst_norm <= UNIT_NORM_TOL, "norm off by {worst_norm:e}");
    ensure!(worst_scale <= SCALE_INVARIANCE_TOL, "stage scaling moved the feature by {worst_scale:e}");
    Ok(format!("dim 1536, max |norm - 1| {worst_norm:.1e}, max scale drift {worst_scale:.1e}"))
}

fn pruning_equivalence() -> Outcome {
    // At least 104 sampled frames per video, so every category's posting list
    // holds more than 100 images. The category term dominates the noise, so
    // every relevant image outranks every image of another category; without
    // that, the unpruned full ranking can interleave them and AP@all differs.
    let spec =
        SyntheticSpec { min_frames: 520, tp_noise: 0.15, category_weight: 2.0, seed: 4, ..SyntheticSpec::default() };
    let bench = ok(synthetic_benchmark(&spec))?;
    let index = ok(build_index(bench.references.clone()))?;
    let all = index.len();
    let (mut pruned, mut unpruned) = (Vec::new(), Vec::new());
    for q in &bench.queries {
        let p = ok(index.search_images(q, all, true))?;
        let u = ok(index.search_images(q, all, false))?;
        ensure!(
            p.scanned == index.posting_size(q.category_id),
            "query {} scanned {} with pruning, posting holds {}",
            q.image_id,
            p.scanned,
            index.posting_size(q.category_id)
        );
        ensure!(u.scanned == all, "unpruned scan of {} instead of {all}", u.scanned);
        let rel = &bench.manifest.ground_truth.relevant[&q.image_id];
        let last_relevant = u.hits.iter().rposition(|h| rel.contains(&h.image_id)).unwrap_or(0);
        let first_other = u.hits.iter().position(|h| h.category_id != q.category_id).unwrap_or(usize::MAX);
        ensure!(
            last_relevant < first_other,
            "precondition: query {} has an image of another category above a relevant one",
            q.image_id
        );
        for k in DEFAULT_CUTOFFS.iter().filter(|k| **k != Cutoff::All) {
            let n = k.limit();
            ensure!(p.hits.len() >= n, "query {} has only {} same-category images", q.image_id, p.hits.len());
            ensure!(p.hits[..n] == u.hits[..n], "query {} top-{n} rankings differ", q.image_id);
        }
        pruned.push(QueryResult { query_id: q.image_id.clone(), hits: p.hits, scanned: p.scanned });
        unpruned.push(QueryResult { query_id: q.image_id.clone(), hits: u.hits, scanned: u.scanned });
    }
    let gt = &bench.manifest.ground_truth;
    let a = ok(map_at_k(&pruned, gt, &DEFAULT_CUTOFFS))?;
    let b = ok(map_at_k(&unpruned, gt, &DEFAULT_CUTOFFS))?;
    ensure!(ok(a.to_json())? == ok(b.to_json())?, "reports differ: {:?} vs {:?}", a.map, b.map);
    let scanned = |rs: &[QueryResult]| rs.iter().map(|r| r.scanned as f64).sum::<f64>();
    let ratio = scanned(&pruned) / scanned(&unpruned);
    Ok(format!(
        "{} queries, mAP@{{10,20,50,100,all}} = {:.4?}, measured scan ratio pruned/unpruned {:.3} ({:.1}x fewer)",
        bench.queries.len(),
        a.map,
        ratio,
        1.0 / ratio
    ))
}

fn permutations(n: usize, f: &mut impl FnMut(&[usize])) {
    fn go(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            go(items, k + 1, f);
            items.swap(k, i);
        }
    }
    go(&mut (0..n).collect(), 0, f);
}

fn metric_oracle() -> Outcome {
    let names: Vec<String> = (0..MAX_RANKING).map(|i| format!("img{i}")).collect();
    let mut checked = 0u64;
    let mut worst = 0.0f64;
    // The oracle depends only on which ranks hold relevant images; cache it by that pattern.
    let mut oracle_cache: HashMap<(usize, u32, Option<usize>), f64> = HashMap::new();
    for n in 1..=MAX_RANKING {
        let subsets: Vec<BTreeSet<String>> = (1u32..1 << n)
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| names[i].clone()).collect())
            .collect();
        let cutoffs: Vec<Option<usize>> = (1..=n).map(Some).chain([None]).collect();
        let mut failure = None;
        permutations(n, &mut |perm| {
            if failure.is_some() {
                return;
            }
            let ranking: Vec<&str> = perm.iter().map(|&i| names[i].as_str()).collect();
            for (s, relevant) in subsets.iter().enumerate() {
                let mask = s as u32 + 1;
                let pattern = perm.iter().enumerate().fold(0u32, |acc, (pos, &i)| acc | ((mask >> i & 1) << pos));
                for &k in &cutoffs {
                    let cutoff = k.map_or(Cutoff::All, Cutoff::Top);
                    let got = match average_precision_at_k(&ranking, relevant, cutoff) {
                        Ok(v) => v,
                        Err(e) => {
                            failure = Some(e.to_string());
                            return;
                        }
                    };
                    let want = *oracle_cache.entry((n, pattern, k)).or_insert_with(|| {
                        let owned: Vec<String> = ranking.iter().map(|s| s.to_string()).collect();
                        ap_term_by_term(&owned, relevant, k)
                    });
                    let d = (got - want).abs();
                    worst = worst.max(d);
                    if d > AP_TOL {
                        failure = Some(format!("ranking {ranking:?}, relevant {relevant:?}, k {k:?}: {got} vs {want}"));
                        return;
                    }
                    checked += 1;
                }
            }
        });
        if let Some(f) = failure {
            return Err(f);
        }
    }

    let bx = |x0: f64, y0: f64, x1: f64, y1: f64| Region::Box(BBox::new(x0, y0, x1, y1, 100, 100).unwrap());
    let gt = |cat: u32, x: f64| GtInstance { image_id: "a".into(), category_id: cat, region: bx(x, 10.0, x + 20.0, 50.0) };
    let det = |cat: u32, x: f64, score: f64| ScoredInstance {
        image_id: "a".into(),
        category_id: cat,
        region: bx(x, 10.0, x + 20.0, 50.0),
        score,
    };
    // (detections, ground truth, threshold, hand-derived AP)
    let cases: Vec<(Vec<ScoredInstance>, Vec<GtInstance>, f64, f64)> = vec![
        (vec![det(1, 0.0, 0.9), det(1, 60.0, 0.3)], vec![gt(1, 0.0)], 0.5, 1.0),
        (vec![det(1, 0.0, 0.3), det(1, 60.0, 0.9)], vec![gt(1, 0.0)], 0.5, 0.5),
        (vec![det(1, 0.0, 0.9), det(1, 60.0, 0.3)], vec![gt(1, 0.0), gt(1, 60.0)], 0.5, 1.0),
        (vec![det(1, 0.0, 0.9), det(1, 30.0, 0.3)], vec![gt(1, 0.0), gt(1, 60.0)], 0.5, 0.5),
        (vec![det(1, 30.0, 0.9), det(1, 0.0, 0.3)], vec![gt(1, 0.0), gt(1, 60.0)], 0.5, 0.25),
        (vec![det(1, 0.0, 0.9), det(1, 0.0, 0.8)], vec![gt(1, 0.0)], 0.5, 1.0),
        (vec![det(1, 0.0, 0.8), det(1, 4.0, 0.9)], vec![gt(1, 0.0)], 0.5, 1.0),
        (vec![det(1, 0.0, 0.8), det(1, 4.0, 0.9)], vec![gt(1, 0.0)], 0.75, 0.5),
        (vec![det(1, 4.0, 0.9), det(1, 60.0, 0.8)], vec![gt(1, 0.0)], 0.75, 0.0),
    ];
    for (i, (dets, gts, r, want)) in cases.iter().enumerate() {
        let got = ok(ap_at_iou(dets, gts, *r))?;
        ensure!(got == *want, "PR case {i}: AP {got}, expected {want}");
    }
    let two_cats = ok(map_r(&[det(1, 0.0, 0.9), det(2, 30.0, 0.8)], &[gt(1, 0.0), gt(2, 60.0)], 0.5))?;
    ensure!(two_cats == 0.5, "two-category mAP {two_cats}, expected 0.5");
    Ok(format!("{checked} (ranking, subset, k) triples exact, {} PR cases exact", cases.len() + 1))
}

fn random_videos(r: &mut ChaCha8Rng, n: usize) -> Vec<VideoAnnotation> {
    (0..n)
        .map(|v| {
            let frames = r.random_range(1..=80);
            VideoAnnotation {
                video_id: format!("v{v:03}"),
                frames: (0..frames).map(|f| format!("v{v:03}/{f}.jpg")).collect(),
                boxes: (0..frames)
                    .map(|f| (f == 0 || r.random_bool(0.85)).then_some(PixelBox { x: 0.0, y: 0.0, w: 4.0, h: 4.0 }))
                    .collect(),
                category_id: (!r.random_bool(0.2)).then(|| r.random_range(1..=80)),
            }
        })
        .collect()
}

fn benchmark_builder() -> Outcome {
    let mut r = rng(106);
    let mut manifests = 0;
    for trial in 0..50 {
        let videos = random_videos(&mut r, 20);
        for stride in [StrideRule::KeepOneSkipFour, StrideRule::EveryFourth] {
            for coco_only in [true, false] {
                let m = match build_manifest(&videos, stride, coco_only) {
                    Ok(m) => m,
                    Err(_) if coco_only && videos.iter().all(|v| v.category_id.is_none()) => continue,
                    Err(e) => return Err(e.to_string()),
                };
                manifests += 1;
                let queries: BTreeSet<&str> = m.queries.iter().map(|q| q.query_id.as_str()).collect();
                ensure!(m.references.iter().all(|x| !queries.contains(x.image_id.as_str())), "trial {trial}: query frame among references");
                let video_of: HashMap<&str, &str> = m.references.iter().map(|x| (x.image_id.as_str(), x.video_id.as_str())).collect();
                for q in &m.queries {
                    let rel = &m.ground_truth.relevant[&q.query_id];
                    ensure!(!rel.is_empty(), "query {} has no relevant frame", q.query_id);
                    ensure!(rel.iter().all(|i| video_of[i.as_str()] == q.video_id), "cross-video relevance for {}", q.query_id);
                }
                let hist = true_positive_histogram(&m);
                for v in &videos {
                    let kept = !coco_only || v.category_id.is_some();
                    let n = v.frames.len();
                    let expected = if kept && n > 1 { (n - 2) / stride.step() + 1 } else { 0 };
                    let got = m.references.iter().filter(|x| x.video_id == v.video_id).count();
                    ensure!(got == expected, "video {} has {got} references, stride rule gives {expected}", v.video_id);
                    let present = if kept {
                        stride.reference_frames(n).filter(|&f| v.boxes[f].is_some()).count()
                    } else {
                        0
                    };
                    let qid = format!("{}_000000", v.video_id);
                    ensure!(
                        hist.per_query.get(&qid).copied().unwrap_or(0) == present,
                        "histogram for {qid} differs from {present} sampled present frames"
                    );
                }
            }
        }
    }
    let bench = ok(synthetic_benchmark(&SyntheticSpec { dim: 4, ..SyntheticSpec::default() }))?;
    let frames: usize = bench.videos.iter().map(|v| v.frames.len()).sum();
    let refs = bench.manifest.references.len() as f64;
    let ratio = refs / TARGET_REFERENCES;
    ensure!(bench.manifest.queries.len() == 160, "{} queries", bench.manifest.queries.len());
    ensure!(
        (CONSISTENCY_RANGE.0..=CONSISTENCY_RANGE.1).contains(&ratio),
        "{refs} references is {ratio:.2}x the expected 11,885"
    );
    Ok(format!(
        "{manifests} manifests exact; 160 videos (mean {:.0} frames) give {refs} references, {ratio:.2}x of 11,885",
        frames as f64 / 160.0
    ))
}

fn scalability() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let root = tmp.path();
    let base = RunConfig { synthetic: Some(SyntheticSpec::default()), seed: 0, ..RunConfig::default() };
    let bench = ok(cmd_build_manifest(&RunConfig { out_dir: root.join("bench"), ..base.clone() }))?;
    let (queries, references) = bench.feature_archives.clone().ok_or("no synthetic archives")?;
    ensure!(bench.queries == 160, "{} queries", bench.queries);
    let run = RunConfig {
        manifest: Some(bench.manifest.clone()),
        queries: Some(queries.clone()),
        features: vec![references.clone()],
        ..base.clone()
    };
    let index = ok(cmd_index(&RunConfig { out_dir: root.join("index"), ..run.clone() }))?;
    let search = ok(cmd_search(&RunConfig { index: Some(index.path), out_dir: root.join("search"), ..run.clone() }))?;
    let report = ok(cmd_eval(&RunConfig { results: Some(search.results), out_dir: root.join("eval"), ..run.clone() }))?;
    let base_map = report.map_at(Cutoff::Top(50)).ok_or("no mAP@50 in base run")?;

    // Time index build plus 160 queries at 10^5 distractor images.
    let start = Instant::now();
    let mut builder = IndexBuilder::new(None);
    for f in ok(instsearch_core::features::archive::read_archive(&references))?.1 {
        ok(builder.push(f))?;
    }
    let spec = run.distractors.spec(100_000, run.seed);
    let mut instances = 0;
    for s in (0..spec.images).step_by(8192) {
        for f in ok(distractor_features(&spec, s..(s + 8192).min(spec.images)))? {
            instances += 1;
            ok(builder.push(f))?;
        }
    }
    let big = builder.finish();
    let qs = ok(instsearch_cli::pipeline::load_queries(&queries))?;
    let (results, _) = ok(run_queries(&big, &qs, 50, false))?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(results.len() == 160, "{} rankings", results.len());
    ensure!(secs < SCALE_BUDGET_SECS, "index build + 160 queries took {secs:.0} s");
    drop(big);

    let mut sweep = run.clone();
    sweep.out_dir = root.join("scale");
    sweep.scale.counts = SCALE_COUNTS.to_vec();
    sweep.scale.repeats = SCALE_SEEDS;
    sweep.scale.k = 50;
    let rows: Vec<ScaleRow> = ok(cmd_scale_with(&sweep, |_| {}))?;
    ensure!(rows.len() == SCALE_SEEDS * SCALE_COUNTS.len(), "{} sweep rows", rows.len());
    let mut curves = Vec::new();
    for seed in 0..SCALE_SEEDS as u64 {
        let mut mine: Vec<&ScaleRow> = rows.iter().filter(|r| r.seed == seed).collect();
        mine.sort_by_key(|r| r.distractor_images);
        ensure!(mine[0].distractor_images == 0, "missing zero point");
        ensure!(
            mine[0].map.to_bits() == base_map.to_bits(),
            "seed {seed}: zero-distractor mAP@50 {} differs from base {}",
            mine[0].map,
            base_map
        );
        for w in mine.windows(2) {
            ensure!(
                w[1].map <= w[0].map,
                "seed {seed}: mAP@50 rose from {} to {} between {} and {} distractors",
                w[0].map,
                w[1].map,
                w[0].distractor_images,
                w[1].distractor_images
            );
        }
        curves.push(mine.iter().map(|r| format!("{:.4}", r.map)).collect::<Vec<_>>().join(" > "));
    }
    let top = rows.iter().find(|r| r.seed == 0 && r.distractor_images == 100_000).ok_or("no 10^5 row")?;
    Ok(format!(
        "10^5 images = {instances} instances, build + 160 queries {secs:.1} s; seed 0 curve {}; scan ratio at 10^5 {:.3}",
        curves[0],
        top.scanned_pruned as f64 / top.scanned_unpruned as f64
    ))
}

fn pipeline_run(root: &Path, threads: usize) -> Result<Vec<(String, PathBuf)>, String> {
    let layout = PipelineFixture { objects: 8, references_per_object: 5, ..PipelineFixture::default() }.write(&root.join("data"));
    let base = RunConfig { manifest: Some(layout.manifest.clone()), threads: Some(threads), seed: 7, ..RunConfig::default() };
    ok(with_pool(&base, || -> anyhow::Result<Vec<(String, PathBuf)>> {
        let refs = cmd_extract(&RunConfig {
            fmap_dir: Some(layout.reference_dir.clone()),
            out_dir: root.join("refs"),
            ..base.clone()
        })?;
        let queries = cmd_extract(&RunConfig {
            fmap_dir: Some(layout.query_dir.clone()),
            query_mode: true,
            out_dir: root.join("queries"),
            ..base.clone()
        })?;
        let mut gen = base.clone();
        gen.out_dir = root.join("distractors");
        gen.distractors.images = 3_000;
        let (distractors, _) = instsearch_cli::data::cmd_gen_distractors(&gen)?;
        let index = cmd_index(&RunConfig {
            features: vec![refs.archive.clone(), distractors.clone()],
            out_dir: root.join("index"),
            ..base.clone()
        })?;
        let search = cmd_search(&RunConfig {
            index: Some(index.path.clone()),
            queries: Some(queries.archive.clone()),
            out_dir: root.join("search"),
            ..base.clone()
        })?;
        cmd_eval(&RunConfig { results: Some(search.results.clone()), out_dir: root.join("eval"), ..base.clone() })?;
        let synthetic = cmd_build_manifest(&RunConfig {
            synthetic: Some(SyntheticSpec { videos: 20, dim: 256, ..SyntheticSpec::default() }),
            out_dir: root.join("synthetic"),
            ..base.clone()
        })?;
        let (sq, sr) = synthetic.feature_archives.expect("synthetic archives");
        Ok(vec![
            ("reference features".into(), refs.archive),
            ("query features".into(), queries.archive),
            ("distractors".into(), distractors),
            ("index".into(), index.path),
            ("results".into(), search.results),
            ("eval report".into(), root.join("eval/eval_report.json")),
            ("eval csv".into(), root.join("eval/eval.csv")),
            ("synthetic manifest".into(), synthetic.manifest),
            ("synthetic queries".into(), sq),
            ("synthetic references".into(), sr),
        ])
    }))?
    .map_err(|e| format!("{e:#}"))
}

fn determinism() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let a = pipeline_run(&tmp.path().join("a"), 1)?;
    let b = pipeline_run(&tmp.path().join("b"), 1)?;
    let c = pipeline_run(&tmp.path().join("c"), 4)?;
    let mut bytes = 0;
    for ((name, pa), ((_, pb), (_, pc))) in a.iter().zip(b.iter().zip(&c)) {
        let x = ok(fs::read(pa))?;
        ensure!(x == ok(fs::read(pb))?, "{name} differs between identical runs");
        ensure!(x == ok(fs::read(pc))?, "{name} differs between 1 and 4 threads");
        bytes += x.len();
    }
    Ok(format!("{} artifacts ({bytes} bytes) identical across 2 runs and 1 vs 4 threads", a.len()))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("kernel oracle suite", kernel_oracles),
        ("degeneracy identities", degeneracy_identities),
        ("feature contract", feature_contract),
        ("pruning equivalence", pruning_equivalence),
        ("metric oracle", metric_oracle),
        ("benchmark builder", benchmark_builder),
        ("scalability run", scalability),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS [{secs:.1} s] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL [{secs:.1} s] {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
