use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use instsearch_cli::data::{cmd_build_manifest, cmd_gen_distractors};
use instsearch_cli::extract::cmd_extract;
use instsearch_cli::pipeline::{cmd_eval, cmd_index, cmd_search, format_report};
use instsearch_cli::scale::cmd_scale_with;
use instsearch_cli::{with_pool, ErrorReport, RunConfig};
use instsearch_core::dataset::{InstanceCountDist, StrideRule, SyntheticSpec};
use instsearch_core::eval::Cutoff;

#[derive(Parser)]
#[command(name = "instsearch", version, about = "Instance search benchmark pipeline")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pool hybrid features for every detection into features.bin.
    Extract(ExtractArgs),
    /// Build index.bin from feature archives.
    Index(IndexArgs),
    /// Rank reference images for each query into results.jsonl.
    Search(SearchArgs),
    /// Score results.jsonl into eval_report.json and eval.csv.
    Eval(EvalArgs),
    /// Sweep distractor counts and report mAP@k, latency and scan counts.
    Scale(ScaleArgs),
    /// Build manifest.json from tracking videos or a synthetic spec.
    BuildManifest(ManifestArgs),
    /// Write distractors.bin.
    GenDistractors(DistractorArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Comma-separated stage names, e.g. conv3,conv4.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    fmap_dir: Option<PathBuf>,
    #[arg(long)]
    det_dir: Option<PathBuf>,
    #[command(flatten)]
    stages: StageArgs,
    #[arg(long)]
    mask_pooling: bool,
    /// Keep one detection per image: the best match to the manifest query box.
    #[arg(long)]
    query_mode: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    /// Feature archives to index.
    #[arg(long = "features", num_args = 1..)]
    features: Vec<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    prune: bool,
    /// Comma-separated cutoffs such as 10,20,50,100,all.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<Cutoff>>,
    /// Distinct images per query; defaults to the largest cutoff.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<Cutoff>>,
    /// File of query ids to evaluate, one per line.
    #[arg(long)]
    subset: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Reference feature archives.
    #[arg(long = "features", num_args = 1..)]
    features: Vec<PathBuf>,
    #[arg(long)]
    prune: bool,
    /// Comma-separated distractor image counts.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    subset: Option<PathBuf>,
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args)]
struct ManifestArgs {
    /// Directory with one tracking-benchmark video per subdirectory.
    #[arg(long)]
    tracking_root: Option<PathBuf>,
    /// JSON synthetic benchmark spec; `{}` takes every default.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// keep-one-skip-four or every-fourth.
    #[arg(long)]
    stride: Option<StrideRule>,
    /// Keep videos whose target is outside COCO-80.
    #[arg(long)]
    all_categories: bool,
}

#[derive(Args)]
struct DistractorArgs {
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Exact instance count per image instead of the default distribution.
    #[arg(long)]
    instances_per_image: Option<u32>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.out_dir, cli.out_dir.clone());
    set(&mut c.seed, cli.seed);
    set_opt(&mut c.threads, cli.threads);
    match &cli.command {
        Command::Extract(a) => {
            set_opt(&mut c.fmap_dir, a.fmap_dir.clone());
            set_opt(&mut c.det_dir, a.det_dir.clone());
            set(&mut c.stages, a.stages.stages.clone());
            c.mask_pooling |= a.mask_pooling;
            c.query_mode |= a.query_mode;
            set_opt(&mut c.manifest, a.manifest.clone());
        }
        Command::Index(a) => {
            if !a.features.is_empty() {
                c.features = a.features.clone();
            }
        }
        Command::Search(a) => {
            set_opt(&mut c.index, a.index.clone());
            set_opt(&mut c.queries, a.queries.clone());
            c.prune |= a.prune;
            set(&mut c.ks, a.ks.clone());
            set_opt(&mut c.depth, a.depth);
        }
        Command::Eval(a) => {
            set_opt(&mut c.results, a.results.clone());
            set_opt(&mut c.manifest, a.manifest.clone());
            set(&mut c.ks, a.ks.clone());
            set_opt(&mut c.subset, a.subset.clone());
        }
        Command::Scale(a) => {
            set_opt(&mut c.manifest, a.manifest.clone());
            set_opt(&mut c.queries, a.queries.clone());
            if !a.features.is_empty() {
                c.features = a.features.clone();
            }
            c.prune |= a.prune;
            set(&mut c.scale.counts, a.counts.clone());
            set(&mut c.scale.repeats, a.repeats);
            set(&mut c.scale.k, a.k);
            set_opt(&mut c.subset, a.subset.clone());
            c.scale.svg &= !a.no_svg;
        }
        Command::BuildManifest(a) => {
            set_opt(&mut c.tracking_root, a.tracking_root.clone());
            if let Some(p) = &a.synthetic {
                let text = std::fs::read_to_string(p)?;
                let spec: SyntheticSpec = serde_json::from_str(&text)?;
                c.synthetic = Some(spec);
            }
            set(&mut c.stride, a.stride);
            c.coco_only &= !a.all_categories;
        }
        Command::GenDistractors(a) => {
            set(&mut c.distractors.images, a.images);
            set(&mut c.distractors.dim, a.dim);
            if let Some(n) = a.instances_per_image {
                c.distractors.instances = InstanceCountDist::Fixed { count: n };
            }
        }
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let c = resolve(cli)?;
    with_pool(&c, || -> Result<()> {
        match &cli.command {
            Command::Extract(_) => {
                let r = cmd_extract(&c)?;
                for f in &r.failures {
                    eprintln!("failed {}: {}", f.image_id, f.error);
                }
                println!("{}", r.summary());
            }
            Command::Index(_) => {
                let s = cmd_index(&c)?;
                println!("indexed {} instances (dim {}) in {} categories", s.instances, s.dim, s.postings.len());
            }
            Command::Search(_) => {
                let s = cmd_search(&c)?;
                println!(
                    "searched {} queries, {} candidates scanned, median {:.2} ms per query",
                    s.queries, s.scanned, s.timings.median_query_millis
                );
            }
            Command::Eval(_) => print!("{}", format_report(&cmd_eval(&c)?)),
            Command::Scale(_) => {
                println!("seed,distractor_images,distractor_instances,map,median_query_ms,scanned_pruned,scanned_unpruned");
                cmd_scale_with(&c, |r| {
                    println!(
                        "{},{},{},{:.4},{:.3},{},{}",
                        r.seed,
                        r.distractor_images,
                        r.distractor_instances,
                        r.map,
                        r.median_query_ms,
                        r.scanned_pruned,
                        r.scanned_unpruned
                    )
                })?;
            }
            Command::BuildManifest(_) => {
                let s = cmd_build_manifest(&c)?;
                println!(
                    "{} queries, {} references, {:.1}% of queries with more than 20 true positives",
                    s.queries,
                    s.references,
                    100.0 * s.histogram.fraction_over_20
                );
            }
            Command::GenDistractors(_) => {
                let (path, n) = cmd_gen_distractors(&c)?;
                println!("wrote {n} distractor instances to {}", path.display());
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport::from_anyhow(&e);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::FAILURE
        }
    }
}
