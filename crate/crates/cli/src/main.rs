mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{DataArgs, HyperArgs};

/// Recurrent bilinear optimization for binary convolutional networks.
#[derive(Parser)]
#[command(name = "rbonn", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a BinCNN-4 network and write checkpoints, a manifest and per-step metrics.
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train one network per (lambda, tau) cell and report final accuracy.
    Sweep(SweepArgs),
    /// Compare float and packed binary convolution latency.
    Bench(BenchArgs),
    /// Histograms of binary weights and scales in a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory for checkpoints and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation; the checkpoint stays resumable.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4,1e-5")]
    pub lambdas: Vec<f64>,
    /// Comma-separated tau values.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub taus: Vec<f64>,
    /// Directory for the accuracy matrix (lambda rows, tau columns).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated geometries `COxCIxKxK/HxW`.
    #[arg(long, value_delimiter = ',', default_value = "64x64x3x3/56x56")]
    pub sizes: Vec<rbonn_core::bench::BenchCase>,
    /// Timed repetitions per kernel (at least 30).
    #[arg(long, default_value_t = rbonn_core::bench::MIN_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer index of a binary convolution; all of them when omitted.
    #[arg(long)]
    pub layer: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_status(&e))
        }
    }
}
