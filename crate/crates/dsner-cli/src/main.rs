//! Command-line pipeline: distant annotation, training, evaluation, and the
//! sampling-strategy ablation grid.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{OptimizerArg, StrategyArg};

#[derive(Parser)]
#[command(
    name = "dsner",
    about = "Distantly supervised span-based NER laboratory",
    version
)]
struct Cli {
    /// Force single-threaded deterministic execution. This build computes
    /// single-threaded in all modes; the flag is accepted for config echo.
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a gold corpus with a gazetteer and report annotation quality.
    Annotate(AnnotateArgs),
    /// Train a span classifier with a negative-sampling strategy.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a gold corpus.
    Eval(EvalArgs),
    /// Run the sampling-strategy/rate grid and tabulate dev metrics.
    Ablate(AblateArgs),
    /// Generate synthetic gold corpora for experiments.
    Synth(SynthArgs),
}

/// Hyperparameters shared by train and ablate. Precedence: command-line flag
/// over config-file entry over built-in default.
#[derive(Args, Clone, Debug, Default)]
pub struct KnobArgs {
    /// Flat key=value config file (same keys as these flags).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Negative sampling rate in (0, 1].
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Momentum coefficient (momentum optimizer only).
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub context_window: Option<usize>,
    #[arg(long)]
    pub max_span_width: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct AnnotateArgs {
    /// Gold corpus in CoNLL column format.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gazetteer TSV (`surface form<TAB>TYPE`).
    #[arg(long, conflicts_with = "delete_rate")]
    pub dict: Option<PathBuf>,
    /// Synthesize the gazetteer from a seeded (1 - rate) sample of the gold
    /// surface forms instead of loading one.
    #[arg(long)]
    pub delete_rate: Option<f64>,
    /// Seed for --delete-rate sampling.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Case-insensitive gazetteer matching.
    #[arg(long)]
    pub case_insensitive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train this many runs with consecutive seeds and report mean/stddev.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Write one JSON selection record per batch to selection.jsonl.
    #[arg(long)]
    pub dump_selection: bool,
    #[command(flatten)]
    pub knobs: KnobArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Gold corpus to evaluate against.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Additionally emit the per-sentence false-positive/false-negative listing.
    #[arg(long)]
    pub errors: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep overlapping predictions instead of resolving them greedily.
    #[arg(long)]
    pub keep_overlaps: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Top-similarity percentages, e.g. `--top 3,5,10`.
    #[arg(long, value_delimiter = ',')]
    pub top: Vec<f64>,
    /// Bottom-similarity percentages, e.g. `--bottom 90,95,97`.
    #[arg(long, value_delimiter = ',')]
    pub bottom: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[command(flatten)]
    pub knobs: KnobArgs,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train_sentences: usize,
    #[arg(long, default_value_t = 50)]
    pub dev_sentences: usize,
    #[arg(long, default_value_t = 0)]
    pub test_sentences: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// Command failure with its process exit code: 2 input/validation error,
/// 3 artifact mismatch, 4 numerical divergence.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn artifact(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<dsner_core::training::TrainError> for CliError {
    fn from(err: dsner_core::training::TrainError) -> Self {
        match err {
            dsner_core::training::TrainError::Diverged { .. } => CliError::numeric(err.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<dsner_core::checkpoint::CheckpointError> for CliError {
    fn from(err: dsner_core::checkpoint::CheckpointError) -> Self {
        CliError::artifact(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Annotate(args) => commands::annotate(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Synth(args) => commands::synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
