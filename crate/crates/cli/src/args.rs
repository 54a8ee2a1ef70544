//! Command-line surface: subcommands and the shared flag set.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Bilinear / temporal-attention networks for order-book time series:
/// parameter counting, training, evaluation, rank sweeps, and inference
/// benchmarks.
#[derive(Debug, Parser)]
#[command(name = "lrtabl", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print parameter-count tables for a structure (no tensors are built)
    Count(CommonArgs),
    /// Train a network and write checkpoint, history, and metrics
    Train(CommonArgs),
    /// Score a trained checkpoint on a dataset split
    Eval(EvalArgs),
    /// Train/evaluate across a range of ranks plus the full baseline
    Sweep(CommonArgs),
    /// Analytic FLOP counts and measured inference latency
    Bench(CommonArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Network structure: A, B, or C
    #[arg(long)]
    pub structure: Option<String>,
    /// Parameterization: full or lowrank
    #[arg(long)]
    pub variant: Option<String>,
    /// Shared rank K for the lowrank variant
    #[arg(long)]
    pub rank: Option<usize>,
    /// Inclusive rank range, e.g. 1..23
    #[arg(long, value_name = "A..B")]
    pub rank_range: Option<String>,
    /// Directory holding day files (falls back to $LRTABL_DATA)
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Data layout description (TOML)
    #[arg(long, value_name = "FILE")]
    pub layout: Option<PathBuf>,
    /// Run configuration file (TOML); flags take precedence
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts (default: out)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed for initialization, shuffling, and synthetic data
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum training epochs
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Use generated data instead of files
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file produced by `train`
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}
