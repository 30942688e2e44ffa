//! `tops`: train, apply, evaluate and inspect trees of predictors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use tops_core::config::{self, ConfigError, DataSchema, ExperimentConfig, Instantiation, TrainConfig};
use tops_core::dataset::{self, DataError};
use tops_core::harness::{self, HarnessError, TrainingReport};
use tops_core::model::ModelError;
use tops_core::{load_model, AlgorithmSpec, LabelKind, LossKind, OverallPredictor};

#[derive(Parser)]
#[command(name = "tops", version, about = "Trees of predictors: an ensemble meta-learner")]
struct Cli {
    /// Worker threads for candidate evaluation and experiment runs
    /// (default: all cores). Output does not depend on this value.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grow a tree, fit path weights and write the model and a report.
    Train(TrainArgs),
    /// Score the rows of a CSV with a saved model.
    Predict(PredictArgs),
    /// Compute a model's loss on a labeled CSV.
    Evaluate(EvaluateArgs),
    /// Print a node summary and export the tree as Graphviz DOT.
    Inspect(InspectArgs),
    /// Run a repeated-split experiment against baselines.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training data (CSV with header).
    #[arg(long)]
    data: PathBuf,
    /// JSON naming the label column and the binary feature columns.
    #[arg(long)]
    schema: PathBuf,
    /// JSON training config; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `tops_lr`, `tops_b`, or a comma-separated list of built-in learners.
    #[arg(long)]
    learners: Option<String>,
    /// One of error, auc, mae, mse.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// S,V1,V2 fractions, e.g. 0.75,0.15,0.10.
    #[arg(long, value_parser = parse_ratios)]
    ratios: Option<(f64, f64, f64)>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf_v1: Option<usize>,
    #[arg(long)]
    min_train_samples: Option<usize>,
    /// Add generalization bounds to the report.
    #[arg(long)]
    bounds: bool,
    /// Confidence parameter for the bounds (implies --bounds).
    #[arg(long)]
    delta: Option<f64>,
    /// Sign draws per Rademacher estimate (implies --bounds).
    #[arg(long)]
    draws: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Report file; defaults to the model path with a `.report.json` suffix.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV holding every feature column the model was trained on.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with the feature columns and the model's label column.
    #[arg(long)]
    data: PathBuf,
    /// Loss to report instead of the model's own.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// DOT output file; standard output when omitted and --path is given.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Terminal id whose root-to-terminal path is highlighted with weights.
    #[arg(long)]
    path: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json, report.txt and timing.json.
    #[arg(long, default_value = "tops-bench")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_runs: Option<usize>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse::<LossKind>().map_err(|e| e.to_string())
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

/// Failure with its exit code: 2 usage or config, 3 data, 4 training.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Training(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Training(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Training(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match e {
            HarnessError::Config(_) | HarnessError::NotTerminal(_) => Failure::Usage(msg),
            HarnessError::Data(_) | HarnessError::TooFewRows { .. } => Failure::Data(msg),
            _ => Failure::Training(msg),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("cannot write {}: {e}", path.display()))
}

/// Writes through a sibling temporary file so that a failed run never leaves
/// a truncated output behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(path, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| io_failure(path, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_failure(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn parse_learners(s: &str) -> Result<Instantiation, Failure> {
    let s = s.trim();
    if s.starts_with("tops_") {
        return Ok(Instantiation::Named(s.to_string()));
    }
    let specs = s
        .split(',')
        .map(|n| AlgorithmSpec::builtin(n.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(Instantiation::Custom(specs))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(l) = &args.learners {
        cfg.instantiation = parse_learners(l)?;
    }
    if let Some(l) = args.loss {
        cfg.loss = l;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.ratios {
        cfg.ratios = r;
    }
    if let Some(v) = args.max_depth {
        cfg.limits.max_depth = v;
    }
    if let Some(v) = args.min_leaf_v1 {
        cfg.limits.min_leaf_v1 = v;
    }
    if let Some(v) = args.min_train_samples {
        cfg.limits.min_train_samples = v;
    }
    if args.bounds || args.delta.is_some() || args.draws.is_some() {
        let mut b = cfg.bounds.unwrap_or_default();
        if let Some(d) = args.delta {
            b.delta = d;
        }
        if let Some(n) = args.draws {
            b.n_draws = n;
        }
        cfg.bounds = Some(b);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn source_date_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(&args)?;
    let schema = DataSchema::load(&args.schema)?;
    let data = schema.load_csv(&args.data)?;
    config::check_loss_labels(cfg.loss, data.label_kind())?;
    info!("loaded {} rows with {} features", data.n_rows(), data.n_features());
    let mut fitted = harness::fit(&data, &cfg)?;
    fitted.model.metadata.build_timestamp = source_date_epoch();
    let report = TrainingReport::new(&fitted);
    let report_path = args.report.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        args.out.with_file_name(format!("{stem}.report.json"))
    });
    write_atomic(&args.out, &fitted.model.to_json())?;
    write_atomic(&report_path, &report.to_json())?;
    print!("{}", harness::text_summary(&fitted.model));
    println!(
        "V1 loss {:.6} -> {:.6} after {} splits",
        report.growth.root_v1_loss, report.growth.final_v1_loss, report.n_splits
    );
    if let Some(b) = &report.bounds {
        println!("bound (delta {}): {:.6}{}", b.delta, b.aggregate, if b.surrogate { " [0-1 surrogate]" } else { "" });
    }
    Ok(())
}

fn predict(args: PredictArgs) -> Result<(), Failure> {
    let h = load_model(&args.model)?;
    let rows = dataset::load_feature_rows(&args.data, &h.metadata.feature_names)?;
    let classify = h.metadata.label_kind == LabelKind::Binary;
    let mut out = String::from(if classify { "score,class\n" } else { "score\n" });
    for x in &rows {
        let s = h.predict(x)?;
        if classify {
            out.push_str(&format!("{s},{}\n", u8::from(s >= 0.5)));
        } else {
            out.push_str(&format!("{s}\n"));
        }
    }
    match &args.out {
        Some(p) => write_atomic(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Evaluation {
    loss: LossKind,
    value: f64,
    n_rows: usize,
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let h = load_model(&args.model)?;
    let data = dataset::load_csv(&args.data, &h.metadata.label_name, &BTreeSet::new())?;
    let kind = args.loss.unwrap_or(h.loss.kind);
    config::check_loss_labels(kind, data.label_kind())?;
    let rows = feature_order(&h, &data)?;
    let scores = rows.iter().map(|x| h.predict(x)).collect::<Result<Vec<_>, _>>()?;
    let value = tops_core::losses::loss_of(kind, &scores, data.labels())
        .map_err(|e| Failure::Data(format!("evaluation: {e}")))?;
    let result = Evaluation {
        loss: kind,
        value,
        n_rows: rows.len(),
    };
    println!("{kind} = {value:.6} on {} rows", result.n_rows);
    if let Some(p) = &args.out {
        write_atomic(p, &to_json(&result))?;
    }
    Ok(())
}

/// Rows of `data` rearranged into the model's feature order.
fn feature_order(h: &OverallPredictor, data: &tops_core::Dataset) -> Result<Vec<Vec<f64>>, Failure> {
    let positions = h
        .metadata
        .feature_names
        .iter()
        .map(|n| {
            data.specs()
                .iter()
                .position(|s| &s.name == n)
                .ok_or_else(|| Failure::Data(DataError::UnknownColumn(n.clone()).to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((0..data.n_rows())
        .map(|r| positions.iter().map(|&f| data.value(r, f)).collect())
        .collect())
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    let h = load_model(&args.model)?;
    let dot = if args.dot.is_some() || args.path.is_some() {
        Some(harness::export_dot(&h, args.path)?)
    } else {
        None
    };
    print!("{}", harness::text_summary(&h));
    match (&args.dot, dot) {
        (Some(p), Some(d)) => write_atomic(p, &d)?,
        (None, Some(d)) => print!("{d}"),
        _ => {}
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = args.n_runs {
        cfg.n_runs = n;
    }
    cfg.validate()?;
    let (report, timing) = harness::run_experiment(&cfg)?;
    let table = report.to_table();
    write_atomic(&args.out_dir.join("report.json"), &report.to_json())?;
    write_atomic(&args.out_dir.join("report.txt"), &table)?;
    write_atomic(&args.out_dir.join("timing.json"), &to_json(&timing))?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TOPS_LOG", "warn")).init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: cannot start {j} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Inspect(a) => inspect(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
