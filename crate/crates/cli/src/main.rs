//! `ptt`: corpus generation, training, tracking, ablation and benchmarking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use ptt_core::eval::{Category, DensityMix, EvalError};
use ptt_core::tensornn::NnError;
use ptt_core::tracker::{parse_on_off, Sampler, TemplateMode, TrackerError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Config(_) => CliError::Usage(e.to_string()),
            TrackerError::Divergence { .. }
            | TrackerError::Nn(NnError::NonFiniteLoss(_))
            | TrackerError::Nn(NnError::NonFiniteGrad(_)) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ptt", version, about = "Point-track transformer tracker on synthetic point-cloud tracklets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic tracklet corpus with train/val/test splits.
    Gen(GenArgs),
    /// Train a tracker on the train split.
    Train(TrainArgs),
    /// Track a split with a checkpoint (or the ground-truth oracle) and report metrics.
    Track(TrackArgs),
    /// Train and evaluate the four PTT wirings under identical seeds.
    Ablate(AblateArgs),
    /// Per-frame timing breakdown of tracking.
    Bench(BenchArgs),
    /// Re-run a command from its run manifest on one thread.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Comma-separated: rigid, nonrigid.
    #[arg(long, default_value = "rigid,nonrigid")]
    categories: String,
    /// mixed | sparse-heavy | dense-heavy
    #[arg(long, default_value = "mixed")]
    mix: DensityMix,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_categories(s: &str) -> Result<Vec<Category>, CliError> {
    s.split(',').map(|c| c.trim().parse().map_err(CliError::Usage)).collect()
}

/// Tracker configuration: a config file, then flag overrides.
#[derive(Debug, Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_on_off)]
    ptt_vote: Option<bool>,
    #[arg(long, value_parser = parse_on_off)]
    ptt_prop: Option<bool>,
    /// fps | rs
    #[arg(long)]
    sampler: Option<Sampler>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Report ground truth for every frame instead of running a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "first+previous")]
    template_mode: TemplateMode,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write per-frame attention weights to attention.txt.
    #[arg(long)]
    dump_attention: bool,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "first+previous")]
    template_mode: TemplateMode,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "first+previous")]
    template_mode: TemplateMode,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// A run_manifest.txt written by an earlier command.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PTT_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Usage(format!("PTT_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(a, argv),
        Command::Train(a) => commands::train(a, argv),
        Command::Track(a) => commands::track(a, argv),
        Command::Ablate(a) => commands::ablate(a, argv),
        Command::Bench(a) => commands::bench(a, argv),
        Command::Replay(a) => commands::replay(a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
