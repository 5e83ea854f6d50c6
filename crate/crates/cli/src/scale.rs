use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use instsearch_core::dataset::distractor_features;
use instsearch_core::eval::{map_at_k, Cutoff};
use instsearch_core::features::archive::read_archive;
use instsearch_core::index::IndexBuilder;
use instsearch_core::{InstanceFeature, SearchIndex};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Failure;
use crate::pipeline::{ground_truth, load_queries, median, run_queries};

pub const SCALE_CSV_FILE: &str = "scale.csv";
pub const SCALE_SVG_FILE: &str = "scale.svg";

/// Distractor images generated and indexed per batch.
const GEN_BATCH: usize = 8192;
/// Per-instance bookkeeping on top of the vector itself: ids, metadata, ordinals.
const RECORD_OVERHEAD: u64 = 160;
const FIXED_OVERHEAD: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub seed: u64,
    pub distractor_images: usize,
    pub distractor_instances: usize,
    pub pruned: bool,
    pub k: usize,
    /// mAP@k in the configured search mode.
    pub map: f64,
    pub median_query_ms: f64,
    pub scanned_pruned: u64,
    pub scanned_unpruned: u64,
}

/// Bytes needed to hold `instances` vectors of `dim` floats in memory.
pub fn memory_estimate(instances: u64, dim: usize) -> u64 {
    instances * (dim as u64 * 4 + RECORD_OVERHEAD) + FIXED_OVERHEAD
}

/// `MemAvailable` from `/proc/meminfo`, when readable.
pub fn available_memory() -> Option<u64> {
    let text = fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn gib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

fn check_memory(instances: u64, dim: usize, available: Option<u64>) -> Result<()> {
    let need = memory_estimate(instances, dim);
    match available {
        Some(avail) if need > avail => Err(Failure::new(
            "resources",
            format!(
                "sweep needs about {:.1} GiB for {instances} indexed instances of dim {dim}; {:.1} GiB available",
                gib(need),
                gib(avail)
            ),
        )
        .into()),
        _ => Ok(()),
    }
}

fn build(references: &[InstanceFeature], config: &RunConfig, images: usize, seed: u64) -> Result<(SearchIndex, usize)> {
    let mut builder = IndexBuilder::new(None);
    for f in references {
        builder.push(f.clone())?;
    }
    let spec = config.distractors.spec(images, seed);
    let mut instances = 0;
    for start in (0..images).step_by(GEN_BATCH) {
        let batch = distractor_features(&spec, start..(start + GEN_BATCH).min(images))?;
        instances += batch.len();
        for f in batch {
            builder.push(f)?;
        }
    }
    Ok((builder.finish(), instances))
}

/// Sweeps distractor counts for each seed, re-running search and mAP@k
/// against the base benchmark. `on_row` sees each row as soon as it is done.
pub fn cmd_scale_with(config: &RunConfig, mut on_row: impl FnMut(&ScaleRow)) -> Result<Vec<ScaleRow>> {
    let queries_path = config.require(&config.queries, "query archive")?;
    if config.features.is_empty() {
        return Err(Failure::usage("no reference feature archives given").into());
    }
    if config.scale.k == 0 || config.scale.repeats == 0 {
        return Err(Failure::usage("scale k and repeats must be positive").into());
    }
    let gt = ground_truth(config)?;
    let queries = load_queries(queries_path)?;
    let mut references = Vec::new();
    for p in &config.features {
        let (_, recs) = read_archive(p).with_context(|| format!("reading {}", p.display()))?;
        references.extend(recs);
    }
    let mut counts = config.scale.counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let max_images = counts.last().copied().unwrap_or(0);
    let expected = references.len() as u64 + (max_images as f64 * config.distractors.instances.mean()).ceil() as u64;
    let dim = queries.first().map_or(config.distractors.dim, |q| q.dim());
    check_memory(expected, dim, available_memory())?;

    let ks = [Cutoff::Top(config.scale.k)];
    let mut rows = Vec::new();
    for seed in (0..config.scale.repeats as u64).map(|i| config.seed.wrapping_add(i)) {
        for &images in &counts {
            let (index, instances) = build(&references, config, images, seed)?;
            let (results, mut millis) = run_queries(&index, &queries, config.scale.k, config.prune)?;
            let (other, _) = run_queries(&index, &queries, config.scale.k, !config.prune)?;
            let report = map_at_k(&results, &gt, &ks)?;
            let scanned = |rs: &[instsearch_core::eval::QueryResult]| rs.iter().map(|r| r.scanned as u64).sum::<u64>();
            let (pruned, unpruned) =
                if config.prune { (scanned(&results), scanned(&other)) } else { (scanned(&other), scanned(&results)) };
            let row = ScaleRow {
                seed,
                distractor_images: images,
                distractor_instances: instances,
                pruned: config.prune,
                k: config.scale.k,
                map: report.map[0],
                median_query_ms: median(&mut millis),
                scanned_pruned: pruned,
                scanned_unpruned: unpruned,
            };
            on_row(&row);
            rows.push(row);
        }
    }

    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    write_scale_csv(&config.out_path(SCALE_CSV_FILE), &rows)?;
    if config.scale.svg {
        fs::write(config.out_path(SCALE_SVG_FILE), scale_svg(&rows))?;
    }
    Ok(rows)
}

pub fn cmd_scale(config: &RunConfig) -> Result<Vec<ScaleRow>> {
    cmd_scale_with(config, |_| {})
}

pub fn write_scale_csv(path: &Path, rows: &[ScaleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean mAP per distractor count, in ascending count order.
pub fn mean_curve(rows: &[ScaleRow]) -> Vec<(usize, f64)> {
    let mut counts: Vec<usize> = rows.iter().map(|r| r.distractor_images).collect();
    counts.sort_unstable();
    counts.dedup();
    counts
        .into_iter()
        .map(|c| {
            let ms: Vec<f64> = rows.iter().filter(|r| r.distractor_images == c).map(|r| r.map).collect();
            (c, ms.iter().sum::<f64>() / ms.len() as f64)
        })
        .collect()
}

/// Line chart of mean mAP@k against distractor count, one evenly spaced
/// tick per sweep point.
pub fn scale_svg(rows: &[ScaleRow]) -> String {
    let curve = mean_curve(rows);
    let k = rows.first().map_or(50, |r| r.k);
    let (w, h, pad) = (480.0, 320.0, 50.0);
    let n = curve.len().max(2) as f64 - 1.0;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n;
    let y = |m: f64| h - pad - (h - 2.0 * pad) * m;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s += &format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad
    );
    s += &format!("<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n", h - pad);
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        s += &format!("<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{t:.2}</text>\n", pad - 6.0, y(t) + 4.0);
    }
    let points: Vec<String> = curve.iter().enumerate().map(|(i, &(_, m))| format!("{:.1},{:.1}", x(i), y(m))).collect();
    s += &format!("<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n", points.join(" "));
    for (i, &(c, m)) in curve.iter().enumerate() {
        s += &format!("<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>\n", x(i), y(m));
        s += &format!("<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{c}</text>\n", x(i), h - pad + 16.0);
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">distractor images</text>\n",
        w / 2.0,
        h - 10.0
    );
    s += &format!("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">mAP@{k}</text>\n", h / 2.0, h / 2.0);
    s += "</svg>\n";
    s
}
