use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use instsearch_core::dataset::BenchmarkManifest;
use instsearch_core::eval::{map_at_k, EvalReport, GroundTruth, QueryResult};
use instsearch_core::features::archive::open_archive;
use instsearch_core::index::IndexBuilder;
use instsearch_core::{InstanceFeature, SearchIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Failure;

pub const INDEX_FILE: &str = "index.bin";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TIMINGS_FILE: &str = "timings.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const EVAL_CSV_FILE: &str = "eval.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub path: PathBuf,
    pub instances: usize,
    pub dim: usize,
    pub postings: BTreeMap<u32, usize>,
}

/// Streams every configured archive into one index and saves `index.bin`.
pub fn cmd_index(config: &RunConfig) -> Result<IndexSummary> {
    if config.features.is_empty() {
        return Err(Failure::usage("no feature archives given").into());
    }
    let mut builder = IndexBuilder::new(None);
    for path in &config.features {
        push_archive(&mut builder, path)?;
    }
    let index = builder.finish();
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let path = config.out_path(INDEX_FILE);
    index.save(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(IndexSummary { path, instances: index.len(), dim: index.dim(), postings: index.posting_sizes().into_iter().collect() })
}

pub(crate) fn push_archive(builder: &mut IndexBuilder, path: &Path) -> Result<()> {
    let ctx = || format!("indexing {}", path.display());
    let reader = open_archive(path).with_context(ctx)?;
    if reader.header().count == 0 {
        return Ok(());
    }
    for rec in reader {
        builder.push(rec.with_context(ctx)?).with_context(ctx)?;
    }
    Ok(())
}

/// Reads a query archive: one instance per query image, keyed by image id.
pub fn load_queries(path: &Path) -> Result<Vec<InstanceFeature>> {
    let ctx = || format!("reading queries {}", path.display());
    let mut queries: Vec<InstanceFeature> = open_archive(path).with_context(ctx)?.collect::<Result<_, _>>().with_context(ctx)?;
    queries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = queries.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Failure::new(
            "record",
            format!("query image `{}` has several instances in {}; extract queries in query mode", w[0].image_id, path.display()),
        )
        .into());
    }
    Ok(queries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTiming {
    pub query_id: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_millis: f64,
    pub median_query_millis: f64,
    pub queries: Vec<QueryTiming>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) }
}

/// Image-level rankings for every query, in query id order, plus per-query latency.
pub fn run_queries(
    index: &SearchIndex,
    queries: &[InstanceFeature],
    depth: usize,
    prune: bool,
) -> Result<(Vec<QueryResult>, Vec<f64>)> {
    let depth = depth.min(index.len());
    let out: Vec<(QueryResult, f64)> = queries
        .par_iter()
        .map(|q| {
            let start = Instant::now();
            let found = index
                .search_images(q, depth, prune)
                .with_context(|| format!("query `{}`", q.image_id))?;
            let millis = start.elapsed().as_secs_f64() * 1e3;
            Ok((QueryResult { query_id: q.image_id.clone(), hits: found.hits, scanned: found.scanned }, millis))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSummary {
    pub results: PathBuf,
    pub queries: usize,
    pub scanned: u64,
    pub timings: Timings,
}

/// Searches each query against the index and writes `results.jsonl`
/// (hits already collapsed to one per image) and `timings.json`.
pub fn cmd_search(config: &RunConfig) -> Result<SearchSummary> {
    let index_path = config.require(&config.index, "index")?;
    let queries_path = config.require(&config.queries, "query archive")?;
    let started = Instant::now();
    let index = SearchIndex::load(index_path).with_context(|| format!("loading index {}", index_path.display()))?;
    let queries = load_queries(queries_path)?;
    if let Some(q) = queries.iter().find(|q| !index.is_empty() && q.dim() != index.dim()) {
        return Err(Failure::new(
            "shape",
            format!(
                "query `{}` in {} has dimension {}, index {} has {}",
                q.image_id,
                queries_path.display(),
                q.dim(),
                index_path.display(),
                index.dim()
            ),
        )
        .into());
    }
    let (results, millis) = run_queries(&index, &queries, config.search_depth(), config.prune)?;

    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let results_path = config.out_path(RESULTS_FILE);
    write_results(&results_path, &results)?;
    let timings = Timings {
        total_millis: started.elapsed().as_secs_f64() * 1e3,
        median_query_millis: median(&mut millis.clone()),
        queries: results.iter().zip(&millis).map(|(r, &m)| QueryTiming { query_id: r.query_id.clone(), millis: m }).collect(),
    };
    fs::write(config.out_path(TIMINGS_FILE), serde_json::to_string_pretty(&timings)? + "\n")?;
    Ok(SearchSummary {
        results: results_path,
        queries: results.len(),
        scanned: results.iter().map(|r| r.scanned as u64).sum(),
        timings,
    })
}

pub fn write_results(path: &Path, results: &[QueryResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<QueryResult>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Query ids from a subset file: one per line, `#` starts a comment.
pub fn read_subset(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading subset {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn ground_truth(config: &RunConfig) -> Result<GroundTruth> {
    let manifest_path = config.require(&config.manifest, "manifest")?;
    let manifest = BenchmarkManifest::load(manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    match &config.subset {
        Some(p) => {
            let ids = read_subset(p)?;
            Ok(manifest.ground_truth.restrict(&ids).with_context(|| format!("applying subset {}", p.display()))?)
        }
        None => Ok(manifest.ground_truth),
    }
}

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["query_id", "k", "ap"])?;
    for (q, k, ap) in report.rows() {
        w.write_record([q, &k.to_string(), &ap.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores `results.jsonl` against the manifest and writes `eval_report.json`
/// and `eval.csv` (one row per query and cutoff).
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport> {
    let results_path = config.require(&config.results, "results file")?;
    let gt = ground_truth(config)?;
    let results = read_results(results_path)?;
    let report = map_at_k(&results, &gt, &config.ks).with_context(|| format!("evaluating {}", results_path.display()))?;
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    fs::write(config.out_path(EVAL_REPORT_FILE), report.to_json()? + "\n")?;
    write_eval_csv(&config.out_path(EVAL_CSV_FILE), &report)?;
    Ok(report)
}

pub fn format_report(report: &EvalReport) -> String {
    let mut s = format!("{} queries\n", report.queries.len());
    for (k, m) in report.ks.iter().zip(&report.map) {
        s += &format!("mAP@{k:<4} {m:.4}\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut []), 0.0);
    }

    #[test]
    fn subset_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ids.txt");
        fs::write(&p, "a\n\n  b  # hard case\n# comment\n").unwrap();
        assert_eq!(read_subset(&p).unwrap(), vec!["a", "b"]);
    }
}
