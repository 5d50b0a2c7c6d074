//! `i2mv`: train, evaluate, generate class views, check gradients and
//! write synthetic data.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage,
//! 3 data or file format.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ConfigKeys;

#[derive(Debug)]
pub enum Failure {
    Runtime(String),
    Config(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Runtime(_) => 1,
            Self::Config(_) => 2,
            Self::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Runtime(m) | Self::Config(m) | Self::Data(m) => m,
        }
    }
}

impl From<i2mv_core::Error> for Failure {
    fn from(e: i2mv_core::Error) -> Self {
        match &e {
            i2mv_core::Error::Config(_) => Self::Config(e.to_string()),
            _ if e.is_data_error() => Self::Data(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<i2mv_promptgen::Error> for Failure {
    fn from(e: i2mv_promptgen::Error) -> Self {
        use i2mv_promptgen::Error as E;
        match e {
            E::Config(_) | E::PoolExhausted { .. } => Self::Config(e.to_string()),
            E::Io { .. } | E::Format { .. } => Self::Data(e.to_string()),
            E::Corpus(inner) => inner.into(),
            E::Request { .. } | E::EmptyGeneration { .. } => Self::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "i2mv", version, about = "Multi-view zero-shot image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Zsl,
    Gzsl,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on seen classes and keep the best validation checkpoint.
    Train {
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Seen-class training images.
        #[arg(long)]
        features: PathBuf,
        /// Validation images (validation classes, plus seen classes for gzsl_h).
        #[arg(long)]
        val_features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the checkpoint and the epoch log.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        keys: ConfigKeys,
    },
    /// Score a checkpoint on test images.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Zsl)]
        mode: Mode,
        /// Seen plus validation images used to pick the calibration shift.
        #[arg(long)]
        heldout_features: Option<PathBuf>,
        /// Where to write the JSON metrics report.
        #[arg(long, default_value = "metrics.json")]
        report: PathBuf,
        #[arg(long)]
        allow_ragged_views: bool,
    },
    /// Generate class views with k-shot prompts.
    Promptgen(commands::PromptgenArgs),
    /// Compare analytic and numeric gradients on the tiny problem.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Corrupt the backward pass on purpose; the check should fail.
        #[arg(long)]
        break_grad: bool,
        #[command(flatten)]
        keys: ConfigKeys,
    },
    /// Write a synthetic dataset bundle.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// JSON generator spec; unset keys keep their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            views,
            embeddings,
            features,
            val_features,
            config,
            out,
            keys,
        } => commands::train(&views, &embeddings, &features, &val_features, config.as_deref(), &out, &keys),
        Command::Eval {
            ckpt,
            features,
            views,
            embeddings,
            mode,
            heldout_features,
            report,
            allow_ragged_views,
        } => commands::eval(commands::EvalArgs {
            ckpt: &ckpt,
            features: &features,
            views: &views,
            embeddings: &embeddings,
            mode,
            heldout: heldout_features.as_deref(),
            report: &report,
            allow_ragged_views,
        }),
        Command::Promptgen(args) => commands::promptgen(&args),
        Command::Gradcheck {
            config,
            epsilon,
            break_grad,
            keys,
        } => commands::gradcheck(config.as_deref(), epsilon, break_grad, &keys),
        Command::Synth { out, seed, spec } => commands::synth(&out, seed, spec.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
