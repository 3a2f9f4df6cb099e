//! Command-line front end: `synth`, `train`, `encode` and `eval`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! format error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::anchor_graph::Bandwidth;
use crate::codes::write_codes;
use crate::dataset::{
    load_features, load_labels, split_indices, synth_multiview, write_features, write_labels, FeatureFormat,
    FeatureMatrix, MultiviewDataset, SplitSpec,
};
use crate::error::{Error, Result};
use crate::model::HashModel;
use crate::retrieval::{map_score, pack, pr_curve, MetricsReport, PR_FILE_POINTS};
use crate::trainer::{train, TrainConfig};

pub const MODEL_FILE: &str = "model.json";
pub const CODES_FILE: &str = "codes.lpmb";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(name = "lpmgh", version, about = "Multiview graph hashing: train, encode and evaluate binary codes")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on this value.
    #[arg(long, global = true, env = "LPMGH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic clustered multiview dataset.
    Synth(SynthArgs),
    /// Train a model and write it with the training codes and convergence trace.
    Train(TrainArgs),
    /// Encode feature files with a trained model.
    Encode(EncodeArgs),
    /// Split data into queries and database, rank by Hamming distance, report MAP.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Lpmv,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FeatureFormat::Csv,
            FormatArg::Lpmv => FeatureFormat::LpmvBinary,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    /// Per-view dimensions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Lpmv)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Feature files, one per view, comma separated (`.csv` or binary).
    #[arg(long, value_delimiter = ',', required = true)]
    views: Vec<PathBuf>,
    /// Labels file, recorded for `eval`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory for the model, codes and reports.
    #[arg(long)]
    model: PathBuf,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Anchors per view.
    #[arg(long)]
    anchors: Option<usize>,
    /// Nearest anchors per sample.
    #[arg(long)]
    anchor_neighbors: Option<usize>,
    /// Gaussian bandwidth: `auto` or a positive number.
    #[arg(long, value_parser = parse_bandwidth)]
    bandwidth: Option<Bandwidth>,
    #[arg(long)]
    kmeans_iters: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    mu_init: Option<f64>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    views: Vec<PathBuf>,
    /// Codes file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature files; defaults to the ones the model was trained on.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<PathBuf>>,
    /// Labels file; defaults to the one given at training time.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Fraction of samples used as queries.
    #[arg(long, default_value_t = 0.2)]
    query_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split each class separately.
    #[arg(long)]
    stratified: bool,
    /// Precision-recall CSV to write.
    #[arg(long)]
    pr: Option<PathBuf>,
    /// Metrics JSON to write; defaults to `metrics.json` in the model directory.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn parse_bandwidth(s: &str) -> std::result::Result<Bandwidth, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Bandwidth::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

/// Input files recorded next to a trained model.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    views: Vec<PathBuf>,
    labels: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Format(_) | Error::Value(_) | Error::Shape(_) | Error::MissingView(_) => 2,
        Error::Numeric(_) | Error::Degenerate(_) => 3,
    }
}

/// Runs one command line (`argv[0]` is the program name) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lpmgh: {e}");
            exit_code(&e)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load_views(paths: &[PathBuf]) -> Result<Vec<FeatureMatrix>> {
    for p in paths {
        require_file(p)?;
    }
    paths.iter().map(|p| load_features(p, FeatureFormat::from_path(p))).collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let ds = synth_multiview(a.n, a.clusters, &a.dims, a.noise, a.seed)?;
    create_dir(&a.out)?;
    let ext = match a.format {
        FormatArg::Csv => "csv",
        FormatArg::Lpmv => "lpmv",
    };
    for (m, x) in ds.views().iter().enumerate() {
        write_features(&a.out.join(format!("view{m}.{ext}")), x, a.format.into())?;
    }
    write_labels(&a.out.join("labels.txt"), ds.labels().unwrap_or_default())?;
    println!("wrote {} samples in {} views to {}", ds.len(), ds.num_views(), a.out.display());
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.bits {
        cfg.bits = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.anchors {
        cfg.anchors.count = Some(v);
    }
    if let Some(v) = a.anchor_neighbors {
        cfg.anchors.neighbors = v;
    }
    if let Some(v) = a.bandwidth {
        cfg.anchors.bandwidth = v;
    }
    if let Some(v) = a.kmeans_iters {
        cfg.anchors.kmeans_iters = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_outer_iters = v;
    }
    if let Some(v) = a.rel_tol {
        cfg.rel_tol = v;
    }
    if let Some(v) = a.mu_init {
        cfg.mu_init = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    if let Some(l) = &a.labels {
        require_file(l)?;
    }
    let views = load_views(&a.views)?;
    let labels = a.labels.as_deref().map(load_labels).transpose()?;
    let ds = MultiviewDataset::new(views, labels)?;
    let (model, codes, report) = train(&ds, &cfg)?;

    create_dir(&a.model)?;
    model.save(&a.model.join(MODEL_FILE))?;
    write_codes(&a.model.join(CODES_FILE), &codes)?;
    let mut csv = String::from("iteration,objective\n");
    for (k, f) in report.objective_per_iter.iter().enumerate() {
        csv.push_str(&format!("{k},{f}\n"));
    }
    write_text(&a.model.join(CONVERGENCE_FILE), &csv)?;
    write_text(&a.model.join(REPORT_FILE), &to_json(&report)?)?;
    let manifest = Manifest {
        views: a.views.clone(),
        labels: a.labels.clone(),
    };
    write_text(&a.model.join(MANIFEST_FILE), &to_json(&manifest)?)?;
    println!(
        "trained {} bits on {} samples: {} iterations, converged={}, objective {}",
        model.bits,
        ds.len(),
        report.iters_run,
        report.converged,
        report.objective_per_iter.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_model(dir: &Path) -> Result<HashModel> {
    let path = dir.join(MODEL_FILE);
    require_file(&path)?;
    HashModel::load(&path)
}

fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let views = load_views(&a.views)?;
    let codes = model.encode(&views)?;
    create_parent(&a.out)?;
    write_codes(&a.out, &codes)?;
    println!("encoded {} samples to {}", codes.nrows(), a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest: Option<Manifest> = {
        let path = a.model.join(MANIFEST_FILE);
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?)
        } else {
            None
        }
    };
    let view_paths = match (&a.views, &manifest) {
        (Some(v), _) => v.clone(),
        (None, Some(m)) => m.views.clone(),
        (None, None) => return Err(Error::Config("no --views given and the model has no manifest".into())),
    };
    let label_path = a
        .labels
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.labels.clone()))
        .ok_or_else(|| Error::Config("evaluation needs labels (--labels)".into()))?;
    require_file(&label_path)?;
    let views = load_views(&view_paths)?;
    let labels = load_labels(&label_path)?;
    let ds = MultiviewDataset::new(views, Some(labels))?;

    let spec = SplitSpec {
        train_fraction: 1.0 - a.query_frac,
        seed: a.seed,
        stratified: a.stratified,
    };
    let (db_rows, query_rows) = split_indices(ds.len(), ds.labels(), &spec)?;
    let codes = model.encode(ds.views())?;
    let labels = ds.labels().unwrap_or_default();
    let pick = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let queries = pack(&codes.select_rows(&query_rows));
    let db = pack(&codes.select_rows(&db_rows))
        .with_ids(db_rows.iter().map(|&i| i as u64).collect())?;
    let (labels_q, labels_db) = (pick(&query_rows), pick(&db_rows));

    let map = map_score(&queries, &db, &labels_q, &labels_db)?;
    let metrics = MetricsReport {
        map,
        n_queries: query_rows.len(),
        n_db: db_rows.len(),
        r: model.bits,
    };
    let metrics_path = a.metrics.clone().unwrap_or_else(|| a.model.join(METRICS_FILE));
    create_parent(&metrics_path)?;
    metrics.write_json(&metrics_path)?;
    if let Some(pr) = &a.pr {
        let curve = pr_curve(&queries, &db, &labels_q, &labels_db)?;
        create_parent(pr)?;
        curve.downsample(PR_FILE_POINTS).write_csv(pr)?;
    }
    println!("MAP {map:.6} ({} queries, {} database, {} bits)", metrics.n_queries, metrics.n_db, metrics.r);
    Ok(())
}
