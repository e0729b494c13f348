//! `emofuse` command-line interface.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emofuse_core::train::Regime;
use emofuse_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "emofuse",
    version,
    about = "Multimodal speech emotion recognition: train, evaluate, ablate, predict"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every subcommand. Precedence, lowest first: defaults,
/// `--config`, the output-directory environment variable, `--set`, then the
/// dedicated flags.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Width multiplier in (0, 1]; accepts fractions such as 1/8.
    #[arg(long, global = true)]
    scale: Option<String>,
    /// Output directory (overrides EMOFUSE_OUTPUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, String)>,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract and cache MFSC maps and LLD vectors for the manifest.
    Features,
    /// Cross-validated training; writes checkpoints, loss logs and results.
    Train {
        #[arg(long)]
        regime: Option<Regime>,
        /// Train and test a single fold.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on its held-out fold or on a whole manifest.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Use every manifest entry instead of the checkpoint's test fold.
        #[arg(long)]
        all: bool,
    },
    /// Cross-validate one model per branch subset.
    Ablate {
        /// Comma-separated subsets such as `word,word+mfsc,all`
        /// (default: all fifteen).
        #[arg(long)]
        subsets: Option<String>,
        #[arg(long)]
        regime: Option<Regime>,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Class and distribution for one utterance.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "WAV")]
        audio: PathBuf,
        #[arg(long, default_value = "")]
        transcript: String,
        /// Space-separated POS tags, one per token.
        #[arg(long)]
        pos: Option<String>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write a synthetic corpus: WAVs, manifest, embeddings and a run config.
    Synth {
        #[arg(long, default_value_t = 100)]
        size: usize,
        /// Probability that a transcript is drawn from its own class's pool.
        #[arg(long, default_value_t = 1.0)]
        correlation: f64,
        /// Target directory (default: `<output_dir>/corpus`).
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        embedding_dim: usize,
    },
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Failures that stop a command, grouped for the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or arguments (exit 2).
    Usage(String),
    /// Unreadable or invalid input data (exit 3).
    Data(String),
    /// Training or numerical failure (exit 4).
    Numeric(String),
    /// Anything else (exit 1).
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Usage(msg),
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Wav { .. }
            | Error::Audio(_)
            | Error::Label(_)
            | Error::Sample { .. }
            | Error::Checkpoint(_) => Failure::Data(msg),
            Error::Diverged(_) | Error::NonFinite { .. } => Failure::Numeric(msg),
            Error::Shape { .. } => Failure::Internal(msg),
        }
    }
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, msg, code) = match self {
            Failure::Usage(m) => ("usage", m, 2),
            Failure::Data(m) => ("data", m, 3),
            Failure::Numeric(m) => ("numeric", m, 4),
            Failure::Internal(m) => ("internal", m, 1),
        };
        eprintln!("error[{kind}]: {msg}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.sequential {
        emofuse_core::parallel::set_enabled(false);
    }
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
