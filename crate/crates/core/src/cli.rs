//! `mvmetric` command-line driver.
//!
//! Every subcommand accepts `--config <file.json>`, a JSON object whose keys
//! mirror the long flag names. Flags given on the command line win. The
//! fully resolved configuration is embedded in every JSON file written.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
//! Failures print one JSON line `{"error": ..., "exit_code": ...}` on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::constraints::build_constraints;
use crate::dataset::{generate_synthetic, load_manifest, split, write_dataset_with_config, MultiviewDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, EvalConfig};
use crate::metric::{check_metric_axioms, SM2LModel, Weighting};
use crate::solver::{train, Hyperparams};
use crate::FORMAT_VERSION;

pub const THREADS_ENV: &str = "MVMETRIC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mvmetric", version, about = "Self-weighted multiview metric learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn per-view metrics on one random split and write the model.
    Train(TrainArgs),
    /// Repeated-split 1NN benchmark.
    Eval(EvalArgs),
    /// Write a synthetic Gaussian-blob dataset.
    Generate(GenerateArgs),
    /// Sample-check the metric axioms of a trained model.
    Check(CheckArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Solver flags shared by `train` and `eval`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SolverArgs {
    /// Embedding dimension per view [default: min(10, smallest view dim)]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    /// Weight exponent, must be > 1 [default: 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    /// Cross-view coupling divisor, must be > 0 [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    /// [default: 1e-6]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    /// Cap on similar and on dissimilar pairs (uniform subsample)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_pairs: Option<usize>,
    /// Center views before forming cross-correlations
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    center_cross: bool,
    /// Standardize every feature after loading
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    standardize: bool,
}

impl SolverArgs {
    fn hyper(&self, view_dims: &[usize]) -> Result<Hyperparams> {
        let mut h = Hyperparams::for_dims(view_dims);
        if let Some(d) = self.d {
            h.d = d;
        }
        if let Some(r) = self.r {
            h.r = r;
        }
        if let Some(eta) = self.eta {
            h.eta = eta;
        }
        if let Some(it) = self.max_iters {
            h.max_iters = it;
        }
        if let Some(tol) = self.tol {
            h.tol = tol;
        }
        h.center_cross = self.center_cross;
        h.validate(view_dims)?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct TrainArgs {
    /// JSON config file with flag-named keys
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_count: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Also write the training trace to this file
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_count: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Report path; stdout when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Per-trial CSV summary path
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    summary_csv: Option<PathBuf>,
    /// Neighbours [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    /// alpha-r, alpha or uniform [default: alpha-r]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weighting: Option<String>,
    /// Also run a baseline on the same splits (only `euclidean`)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct GenerateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    per_class: Option<usize>,
    /// Comma-separated feature counts, one per view
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    view_dims: Option<Vec<usize>>,
    /// Comma-separated 1-based indices of pure-noise views
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_views: Option<Vec<usize>>,
    /// [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct CheckArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    /// Random triples per view [default: 1000]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// 1-based view to check; all views when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    view: Option<usize>,
    /// Report path; stdout when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    standardize: bool,
}

/// Overlays command-line values on the config file named by `--config`.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound { what: "config file", path: path.to_path_buf() },
                _ => Error::Io { path: path.to_path_buf(), source },
            })?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(Error::Parse { path: path.to_path_buf(), msg: "config must be a JSON object".into() }),
                Err(e) => return Err(Error::Parse { path: path.to_path_buf(), msg: e.to_string() }),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        merged.extend(given);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::invalid(format!("config: {e}")))
}

fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::invalid(format!("missing required option --{flag}")))
}

fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a non-negative integer"))),
        _ => Ok(0),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_pretty(value: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load(manifest: &Path, standardize: bool) -> Result<MultiviewDataset> {
    let ds = load_manifest(manifest)?;
    Ok(if standardize { ds.standardized() } else { ds })
}

fn cmd_train(flags: TrainArgs) -> Result<()> {
    let args = resolve(&flags, flags.config.as_deref())?;
    let manifest = require(&args.manifest, "manifest")?;
    let train_count = require(&args.train_count, "train-count")?;
    let out = require(&args.out, "out")?;
    let seed = args.seed.unwrap_or(0);
    let dataset = load(&manifest, args.solver.standardize)?;
    let hyper = args.solver.hyper(&dataset.view_dims())?;

    let spec = split(&dataset, train_count, seed)?;
    let constraints = build_constraints(&dataset.select_labels(&spec.train_indices), args.solver.max_pairs, seed)?;
    let model = train(&dataset, &spec, &constraints, &hyper)?;

    let config = json!({
        "command": "train",
        "manifest": manifest,
        "train-count": train_count,
        "seed": seed,
        "max-pairs": args.solver.max_pairs,
        "standardize": args.solver.standardize,
        "hyperparams": hyper,
        "train-indices": spec.train_indices,
    });
    write_out(Some(&out), &model.to_json(Some(&config))?)?;
    if let Some(path) = &args.trace {
        let doc = json!({ "format_version": FORMAT_VERSION, "config": config, "trace": model.trace() });
        write_out(Some(path), &to_pretty(&doc)?)?;
    }
    eprintln!(
        "alpha = {:?}, iterations = {}, converged = {}",
        model.alpha(),
        model.trace().iterations.len(),
        model.trace().converged
    );
    Ok(())
}

fn cmd_eval(flags: EvalArgs) -> Result<()> {
    let args = resolve(&flags, flags.config.as_deref())?;
    let manifest = require(&args.manifest, "manifest")?;
    let train_count = require(&args.train_count, "train-count")?;
    let trials = args.trials.unwrap_or(10);
    if trials < 1 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let weighting: Weighting = args.weighting.as_deref().unwrap_or("alpha-r").parse()?;
    let baseline = match args.baseline.as_deref() {
        None => false,
        Some("euclidean") => true,
        Some(other) => return Err(Error::invalid(format!("unknown baseline {other:?} (euclidean)"))),
    };
    let dataset = load(&manifest, args.solver.standardize)?;
    let hyper = args.solver.hyper(&dataset.view_dims())?;

    let mut config = EvalConfig::new(train_count, trials, args.seed.unwrap_or(0), hyper);
    config.k = args.k.unwrap_or(1);
    config.max_pairs = args.solver.max_pairs;
    config.weighting = weighting;
    config.baseline = baseline;
    config.threads = threads_from_env()?;
    let report = run_benchmark(&dataset, &config)?;

    let mut doc = serde_json::to_value(&report)?;
    doc["run_config"] = json!({
        "command": "eval",
        "manifest": manifest,
        "standardize": args.solver.standardize,
    });
    write_out(args.out.as_deref(), &to_pretty(&doc)?)?;
    if let Some(path) = &args.summary_csv {
        write_out(Some(path), &report.summary_csv())?;
    }
    eprintln!("mean accuracy = {}, max accuracy = {}", report.mean_accuracy, report.max_accuracy);
    Ok(())
}

fn cmd_generate(flags: GenerateArgs) -> Result<()> {
    let args = resolve(&flags, flags.config.as_deref())?;
    let out = require(&args.out, "out")?;
    let noise = args.noise_views.clone().unwrap_or_default();
    if noise.contains(&0) {
        return Err(Error::invalid("noise views are 1-based"));
    }
    let spec = SyntheticSpec {
        classes: require(&args.classes, "classes")?,
        per_class: require(&args.per_class, "per-class")?,
        view_dims: require(&args.view_dims, "view-dims")?,
        noise_views: noise.iter().map(|v| v - 1).collect(),
        seed: args.seed.unwrap_or(0),
    };
    let dataset = generate_synthetic(&spec)?;
    let config = json!({
        "command": "generate",
        "classes": spec.classes,
        "per-class": spec.per_class,
        "view-dims": spec.view_dims,
        "noise-views": noise,
        "seed": spec.seed,
    });
    let manifest = write_dataset_with_config(&dataset, &out, Some(config))?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

/// Returns whether any axiom violation was found.
fn cmd_check(flags: CheckArgs) -> Result<bool> {
    let args = resolve(&flags, flags.config.as_deref())?;
    let model = SM2LModel::load(require(&args.model, "model")?)?;
    let manifest = require(&args.manifest, "manifest")?;
    let dataset = load(&manifest, args.standardize)?;
    if dataset.view_dims() != model.projections().w.iter().map(|w| w.nrows()).collect::<Vec<_>>() {
        return Err(Error::invalid("model view dimensions do not match the dataset"));
    }
    let trials = args.trials.unwrap_or(1000);
    let seed = args.seed.unwrap_or(0);
    let views: Vec<usize> = match args.view {
        Some(0) => return Err(Error::invalid("views are 1-based")),
        Some(v) if v > model.n_views() => return Err(Error::invalid(format!("view {v} out of range"))),
        Some(v) => vec![v - 1],
        None => (0..model.n_views()).collect(),
    };
    let mut reports = Vec::new();
    for v in views {
        let view = dataset.view(v);
        let samples: Vec<_> = (0..view.n_samples()).map(|i| view.sample(i)).collect();
        reports.push(check_metric_axioms(&model, v, &samples, trials, seed)?);
    }
    let violations = reports.iter().any(|r| r.has_violations());
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "config": {
            "command": "check",
            "model": args.model,
            "manifest": manifest,
            "trials": trials,
            "seed": seed,
            "view": args.view,
            "standardize": args.standardize,
        },
        "violations": violations,
        "reports": reports,
    });
    write_out(args.out.as_deref(), &to_pretty(&doc)?)?;
    Ok(violations)
}

fn fail(message: &str, code: u8) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("{}", json!({ "error": one_line, "exit_code": code }));
    ExitCode::from(code)
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail(first, 2);
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a).map(|_| false),
        Command::Eval(a) => cmd_eval(a).map(|_| false),
        Command::Generate(a) => cmd_generate(a).map(|_| false),
        Command::Check(a) => cmd_check(a),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => fail("metric axiom violations found", 1),
        Err(e) => fail(&e.to_string(), if e.is_usage() { 2 } else { 1 }),
    }
}
