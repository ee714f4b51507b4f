//! `wssv` — operator command line for the WSSV recognition toolkit.
//!
//! Exit codes: 0 on success, 1 on a domain failure (one JSON line on stderr),
//! 2 on a usage error.

mod commands;
mod dataset;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "wssv", version, about = "White spot syndrome recognition: inference, evaluation and dataset tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score images with a model bundle.
    Predict(PredictArgs),
    /// Compute an occlusion saliency map and write a red-blue overlay PNG.
    Saliency(SaliencyArgs),
    /// Aggregate F1 / AUC-ROC / FNR over per-fold score files.
    Evaluate(EvaluateArgs),
    /// Assign labeled ids to stratified folds.
    Kfold(KfoldArgs),
    /// Split labeled ids into stratified train and test sets.
    Holdout(HoldoutArgs),
    /// Add seeded augmented copies of a dataset's training samples.
    Augment(AugmentArgs),
    /// Compare reference and converted model scores against a tolerance gate.
    Parity(ParityArgs),
    /// Measure CPU inference latency of a model bundle.
    Bench(BenchArgs),
    /// Manage a dataset store.
    Dataset(DatasetArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write a small fixed-weight model bundle for smoke tests.
    ToyBundle(ToyBundleArgs),
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model bundle directory (model.onnx, metadata.json, model.onnx.sha256).
    #[arg(long)]
    bundle: PathBuf,
    /// Images to score.
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Decision threshold; defaults to the bundle's own.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FillArg {
    Mean,
    Gray,
}

#[derive(Debug, Args)]
struct SaliencyArgs {
    #[arg(long)]
    bundle: PathBuf,
    image: PathBuf,
    /// Where to write the overlay PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    patch: u32,
    #[arg(long, default_value_t = 8)]
    stride: u32,
    #[arg(long, value_enum, default_value_t = FillArg::Mean)]
    fill: FillArg,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// One CSV per fold with header `sample_id,truth,score`, in fold order.
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Fold plan; when given, the i-th score file must hold exactly fold i.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct KfoldArgs {
    /// Dataset manifest, or a JSON object mapping id to label.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HoldoutArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Dataset store directory.
    #[arg(long)]
    root: PathBuf,
    /// Copies per training sample.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON sampling policy; built-in ranges when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ParityArgs {
    /// CSV with header `input_id,score` from the reference model.
    #[arg(long)]
    reference: PathBuf,
    /// CSV with header `input_id,score` from the converted model.
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long, default_value_t = 2e-3)]
    max_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    mean_tol: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Image to time; a mid-gray frame when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value = "cpu")]
    device_label: String,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset store directory.
    #[arg(long)]
    root: PathBuf,
    #[command(subcommand)]
    command: dataset::DatasetCommand,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ToyKind {
    /// Outputs a fixed logit whatever the input.
    Constant,
    /// Responds only to the brightness of the top-left region.
    Patch,
}

#[derive(Debug, Args)]
struct ToyBundleArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ToyKind::Patch)]
    kind: ToyKind,
    #[arg(long, default_value_t = 64)]
    side: u32,
    /// Logit of the constant model.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    logit: f32,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Predict(a) => commands::predict(a),
        Command::Saliency(a) => commands::saliency(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Kfold(a) => commands::kfold(a),
        Command::Holdout(a) => commands::holdout(a),
        Command::Augment(a) => commands::augment(a),
        Command::Parity(a) => commands::parity(a),
        Command::Bench(a) => commands::bench(a),
        Command::Dataset(a) => dataset::run(&a.root, a.command),
        Command::Serve(a) => commands::serve(a),
        Command::ToyBundle(a) => commands::toy_bundle(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json_line());
            ExitCode::from(1)
        }
    }
}
