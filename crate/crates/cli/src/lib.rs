//! Command-line front end for the `forgery-ensemble` engine.
//!
//! [`run`] parses nothing and prints nothing: it takes parsed [`Cli`]
//! arguments and returns the bytes destined for stdout, so commands can be
//! exercised in-process. Exit codes are carried by [`CliError::exit_code`].

mod commands;
mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forgery_ensemble::aggregation::{AggregationPolicy, Pooling};
use forgery_ensemble::ensemble::Design;
use forgery_ensemble::evaluation::Level;
use forgery_ensemble::metrics::{MetricMode, Task};
use thiserror::Error;

pub use commands::run_command;

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "forgery-ensemble", version, about = "Score-level ensembles for face-forgery detection")]
pub struct Cli {
    /// Worker threads; output is identical for every value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest, and optionally a score file against it.
    Validate(ValidateArgs),
    /// Evaluate one ensemble design and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Sweep the decision threshold of a max-pooling design.
    Sweep(SweepArgs),
    /// Fold face decisions into per-video verdicts.
    Aggregate(AggregateArgs),
    /// Generate a synthetic manifest and score file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Inputs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    /// Fail when a class has no ground-truth samples (default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Drop classes without ground-truth samples from the average.
    #[arg(long)]
    pub lenient: bool,
}

impl ModeArgs {
    pub fn mode(&self) -> MetricMode {
        if self.lenient {
            MetricMode::Lenient
        } else {
            MetricMode::Strict
        }
    }
}

#[derive(Debug, Args)]
pub struct AggregationArgs {
    /// A video is fake when its pooled score is strictly above this.
    #[arg(long, default_value_t = 0.5)]
    pub video_threshold: f64,
    #[arg(long, default_value = "mean", value_parser = parse_pooling)]
    pub identity_pool: Pooling,
    #[arg(long, default_value = "max", value_parser = parse_pooling)]
    pub video_pool: Pooling,
}

impl AggregationArgs {
    pub fn policy(&self) -> AggregationPolicy {
        AggregationPolicy {
            identity_pooling: self.identity_pool,
            video_pooling: self.video_pool,
            video_threshold: self.video_threshold,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_parser = parse_design)]
    pub design: Design,
    /// Decision threshold of the max-pooling designs; ignored by the soft ones.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value = "detection", value_parser = parse_task)]
    pub task: Task,
    #[arg(long, default_value = "face", value_parser = parse_level)]
    pub level: Level,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Comma-separated model ids; defaults to every model of the design's kind.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[command(flatten)]
    pub aggregation: AggregationArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a plain-text table to stdout.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_parser = parse_design)]
    pub design: Design,
    /// `lo:hi:step`, endpoints inclusive; defaults to 0.05:0.95:0.05.
    #[arg(long)]
    pub grid: Option<String>,
    /// Defaults to detection, plus attribution when the manifest has class labels.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[command(flatten)]
    pub mode: ModeArgs,
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = SweepFormat::Csv)]
    pub format: SweepFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_parser = parse_design)]
    pub design: Design,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub mode: ModeArgs,
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[command(flatten)]
    pub aggregation: AggregationArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// One of: confident, weak-diverse, weak-correlated, specialists.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// JSON oracle configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the preset or config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving manifest.tsv and scores.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_design(s: &str) -> Result<Design, String> {
    s.parse()
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn parse_level(s: &str) -> Result<Level, String> {
    s.parse()
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    s.parse()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Mismatch(_) => EXIT_MISMATCH,
        }
    }
}

/// What a successful or validation-failing command produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    pub exit_code: i32,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Output { stdout, exit_code: 0 }
    }
}

/// Runs a parsed command on a thread pool sized by `--jobs`.
pub fn run(cli: Cli) -> Result<Output, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        builder = builder.num_threads(jobs.into());
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker threads: {e}")))?;
    pool.install(|| run_command(&cli.command))
}
