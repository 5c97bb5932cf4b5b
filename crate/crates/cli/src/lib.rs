//! Command-line front end: train, sweep, eval, and encode subcommands plus a
//! manifest-driven `rerun`. Exit codes: 0 success, 2 validation/usage error,
//! 3 runtime error.

pub mod backend;
pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// CLI-level error carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad input the user can fix: flags, config keys, malformed data files.
    Validation(String),
    /// Environment or execution failure: IO, corrupt artifacts, numerics.
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Validation(m) | Self::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "validation error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<emoembed::dataset::DatasetError> for CliError {
    fn from(e: emoembed::dataset::DatasetError) -> Self {
        use emoembed::dataset::DatasetError as D;
        match &e {
            D::Parse { .. } | D::Validation { .. } => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<emoembed::training::TrainError> for CliError {
    fn from(e: emoembed::training::TrainError) -> Self {
        use emoembed::training::TrainError as T;
        match &e {
            T::Config(_) | T::EmptyData => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<emoembed::density::DensityError> for CliError {
    fn from(e: emoembed::density::DensityError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<emoembed::net::checkpoint::CheckpointError> for CliError {
    fn from(e: emoembed::net::checkpoint::CheckpointError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<emoembed::net::NetError> for CliError {
    fn from(e: emoembed::net::NetError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<emoembed::eval::EvalError> for CliError {
    fn from(e: emoembed::eval::EvalError) -> Self {
        use emoembed::eval::EvalError as E;
        match &e {
            E::BadSweep(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<emoembed::va::VaError> for CliError {
    fn from(e: emoembed::va::VaError) -> Self {
        Self::Validation(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "emoembed",
    version,
    about = "Valence-Arousal conditioned prompt-feature toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the injection network on a paired-prompt dataset.
    Train(TrainArgs),
    /// Generate a V-A sweep from a trained checkpoint through a backend.
    Sweep(SweepArgs),
    /// Evaluate a sweep directory and write a metric report.
    Eval(EvalArgs),
    /// Encode a dataset's prompts into cached feature tensors.
    Encode(EncodeArgs),
    /// Re-execute a previous run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML run configuration ([model] and [train] tables).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Paired-prompt dataset (JSON lines).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Artifact directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Trained network checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Artifact directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt text to condition on; may be empty for pure emotion sweeps.
    #[arg(long, default_value = "")]
    pub prompt: String,
    /// Swept axis: valence, arousal, or both-grid.
    #[arg(long, default_value = "valence")]
    pub axis: String,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub start: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub stop: f64,
    #[arg(long, default_value_t = 0.2)]
    pub step: f64,
    /// Value held on the non-swept axis (single-axis sweeps).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub fixed: f64,
    /// Named emotion whose preset supplies the fixed coordinate.
    #[arg(long)]
    pub emotion: Option<String>,
    /// Preset table file; built-in table when omitted.
    #[arg(long)]
    pub presets: Option<PathBuf>,
    /// Generation backend: null or external.
    #[arg(long, default_value = "null")]
    pub backend: String,
    /// Backend sampling seed, fixed across the whole sweep.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvalArgs {
    /// A sweep artifact directory to evaluate.
    #[arg(long)]
    pub sweep_dir: PathBuf,
    /// Artifact directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// TOML run configuration; [model] sets the encoder geometry.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Paired-prompt dataset (JSON lines).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Artifact directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RerunArgs {
    /// Manifest of the run to repeat.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh artifact directory for the repeated run.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train::cmd_train(&args),
        Command::Sweep(args) => commands::sweep::cmd_sweep(&args),
        Command::Eval(args) => commands::eval::cmd_eval(&args),
        Command::Encode(args) => commands::encode::cmd_encode(&args),
        Command::Rerun(args) => commands::rerun(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
