//! `gridbary`: dataset generation, barycenter oracles, training, prediction,
//! evaluation, benchmarks and color transfer from one binary.

mod bench;
mod color;
mod commands;
mod exit;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gridbary", version, about = "Wasserstein barycenters on regular grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random contour shapes and barycenter targets from a JSON config.
    GenDataset(GenDatasetArgs),
    /// Compute a barycenter with an oracle or a trained model.
    Bary(BaryArgs),
    /// Train the network on a generated dataset.
    Train(TrainArgs),
    /// Predict a barycenter with a trained model.
    Predict(PredictArgs),
    /// Score a model on a dataset and write a CSV.
    Eval(EvalArgs),
    /// Time barycenter methods.
    Bench(BenchArgs),
    /// Recolor an image with the palette barycenter of source images.
    ColorTransfer(ColorArgs),
}

#[derive(Args, Debug)]
pub struct GenDatasetArgs {
    /// JSON config: size, seed, n_shapes, n_pairs, oracle, eps, out.
    pub config: PathBuf,
    /// Overrides the output directory of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BaryArgs {
    /// lp, regularized, linearized, lagrangian[:k], radon[:n] or model.
    pub method: String,
    /// Input measures (.wbgm or .pgm).
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated weights, normalized if they do not sum to one.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Output WBGM; a PGM preview is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint for `model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Entropic regularization of the Sinkhorn-based methods.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Final checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub widths: Vec<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long)]
    pub t_mult: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// JSON-lines step log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score; omit with --self-targets.
    #[arg(long, required_unless_present = "self_targets")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score the targets against themselves.
    #[arg(long)]
    pub self_targets: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "model,linearized,lagrangian:10,radon:180")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Repetitions for oracle methods; defaults to --reps.
    #[arg(long)]
    pub oracle_reps: Option<usize>,
    /// Checkpoint for `model`; untrained weights of the default architecture otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `single` pins to one worker thread, `max` uses the whole pool.
    #[arg(long, default_value = "single")]
    pub threads: String,
    /// CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ColorArgs {
    pub target: PathBuf,
    #[arg(required = true, num_args = 1..)]
    pub sources: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// `model` or a barycenter method name; `oracle` means linearized.
    #[arg(long, default_value = "oracle")]
    pub method: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for source and barycenter histograms as WBGM.
    #[arg(long)]
    pub keep_intermediates: Option<PathBuf>,
    /// Diagnostics JSON.
    #[arg(long)]
    pub diag: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    /// Regularization of the chroma plan.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Regularization of the Sinkhorn-based barycenter oracles.
    #[arg(long, default_value_t = 1e-3)]
    pub oracle_eps: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = inputs::configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenDataset(a) => commands::gen_dataset(a),
        Command::Bary(a) => commands::bary(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => bench::run(a),
        Command::ColorTransfer(a) => color::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
