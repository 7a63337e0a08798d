//! `caedet`: train, evaluate and score the convolutional autoencoder anomaly
//! detector, generate the synthetic dataset, and plot training metrics.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or configuration error,
//! 3 numeric failure (non-finite values during training).

mod commands;
mod metrics;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use caedet_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "caedet", version, about = "Convolutional autoencoder video anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an autoencoder; writes a metrics CSV and a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint: reconstruction accuracy plus detection metrics
    Eval(EvalArgs),
    /// Score an arbitrary directory of frames with a trained model
    Score(ScoreArgs),
    /// Generate the synthetic blob dataset
    Synth(SynthArgs),
    /// Render a metrics CSV as a self-contained SVG chart
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Ped1,
    Ped2,
    Synth,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root directory
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Which dataset the root holds
    #[arg(long, value_enum, default_value_t = DatasetKind::Synth)]
    pub dataset: DatasetKind,
    /// Training epochs
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    pub epochs: u32,
    /// Batch size (frames)
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(usize))]
    pub batch: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Seed for initialization and shuffling
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Channel-width divisor (1 = the full architecture)
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    /// Fraction of training clips held out for validation
    #[arg(long, default_value_t = 0.15)]
    pub val_fraction: f64,
    /// Checkpoint output path
    #[arg(long, default_value = "model.ckpt")]
    pub ckpt: PathBuf,
    /// Metrics CSV output path
    #[arg(long, default_value = "metrics.csv")]
    pub metrics: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long, default_value = "model.ckpt")]
    pub ckpt: PathBuf,
    /// Dataset root directory
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Which dataset the root holds
    #[arg(long, value_enum, default_value_t = DatasetKind::Synth)]
    pub dataset: DatasetKind,
    /// Expected channel-width divisor; must match the checkpoint when given
    #[arg(long)]
    pub scale: Option<usize>,
    /// Batch size for inference
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(usize))]
    pub batch: usize,
    /// Fraction of training clips used as the threshold-fitting set
    #[arg(long, default_value_t = 0.15)]
    pub val_fraction: f64,
    /// Quantile of normal validation scores used as the threshold
    #[arg(long, default_value_t = 0.99)]
    pub quantile: f64,
    /// Scores CSV output path
    #[arg(long, default_value = "scores.csv")]
    pub scores: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Checkpoint to score with
    #[arg(long, default_value = "model.ckpt")]
    pub ckpt: PathBuf,
    /// Directory of frames (or of clip subdirectories)
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Scores CSV output path
    #[arg(long, default_value = "scores.csv")]
    pub scores: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for the generated dataset
    #[arg(long, default_value = "synth_data")]
    pub out: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of clips
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(usize))]
    pub clips: usize,
    /// Fraction of clips containing an anomaly
    #[arg(long, default_value_t = 0.3)]
    pub anomaly_rate: f64,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Metrics CSV produced by `caedet train`
    #[arg(long, default_value = "metrics.csv")]
    pub metrics: PathBuf,
    /// SVG output path
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("CAEDET_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("CAEDET_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(err) = configure_threads() {
        eprintln!("error: {err}");
        return ExitCode::from(exit_code_for(&err));
    }

    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Score(args) => commands::score(args),
        Command::Synth(args) => commands::synth(args),
        Command::Plot(args) => commands::plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
