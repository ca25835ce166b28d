//! Configuration-driven CLI for the few-shot prompt-classification pipeline:
//! build verbalizers, fine-tune, evaluate, search conjunctions, interpret,
//! and run full multi-seed experiment grids.

mod backend_setup;
mod commands;
mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Applicability(String),
    #[error(transparent)]
    Core(#[from] promptcls_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Internal(String),
}

macro_rules! from_core_error {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Core(promptcls_core::Error::from(err))
            }
        })*
    };
}

from_core_error!(
    promptcls_core::CorpusError,
    promptcls_core::TemplateError,
    promptcls_core::BackendError,
    promptcls_core::VerbalizerError,
    promptcls_core::TrainError,
    promptcls_core::AnalysisError
);

impl CliError {
    /// 0 success, 1 internal error, 2 configuration/applicability error.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Applicability(_) => 2,
            CliError::Core(err) if err.is_user_error() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "promptcls",
    version,
    about = "Few-shot prompt-based text classification with automatic verbalizers"
)]
struct Cli {
    /// Run configuration file (TOML with dotted keys)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: FlagOverrides,

    #[command(subcommand)]
    command: Command,
}

/// Flag overrides applied on top of the config file.
#[derive(Args)]
struct FlagOverrides {
    /// Verbalizer method: pet, amulap, laav, petal, npprompt, traditional_ft
    #[arg(long, global = true)]
    method: Option<String>,
    /// LAAV conjunction (default "and")
    #[arg(long, global = true)]
    conj: Option<String>,
    /// Tokens per class (default 32)
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Shots-per-class grid, e.g. 4,8,16,32
    #[arg(long, global = true, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    /// Seed list, e.g. 13,21,42
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    max_chars: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

impl FlagOverrides {
    fn to_overrides(&self) -> config::Overrides {
        config::Overrides {
            method: self.method.clone(),
            conj: self.conj.clone(),
            k: self.k,
            shots: self.shots.clone(),
            seeds: self.seeds.clone(),
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            max_chars: self.max_chars,
            output_dir: self.output_dir.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a verbalizer from one seeded split and write it as JSON
    BuildVerbalizer {
        /// Output path (default <output_dir>/<run_id>/verbalizer.json)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune one (shots, seed) cell: the first shots and first seed
    Train {
        /// Use a pre-built verbalizer file instead of building one
        #[arg(long)]
        verbalizer: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Verbalizer JSON (required for verbalizer methods)
        #[arg(long)]
        verbalizer: Option<PathBuf>,
        /// Also write the report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (shots, seed) cell and aggregate macro-F1
    RunExperiment,
    /// Rank connective candidates; optionally evaluate a shortlist
    SearchConjunction {
        /// Candidate words to evaluate end to end (default config shortlist)
        #[arg(long, value_delimiter = ',')]
        shortlist: Option<Vec<String>>,
        /// Fine-tune and evaluate each shortlist candidate over the grid
        #[arg(long)]
        evaluate_shortlist: bool,
    },
    /// Logits-difference interpretation of a trained verbalizer
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        verbalizer: PathBuf,
    },
    /// Aggregate completed cells from run directories into one table
    Report {
        #[arg(long = "run-dir", required = true, num_args = 1..)]
        run_dirs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<config::RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Config("this command needs --config <file>".into())
    })?;
    config::load(path, &cli.overrides.to_overrides())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildVerbalizer { out } => {
            commands::cmd_build_verbalizer(&load_config(&cli)?, out.clone())
        }
        Command::Train { verbalizer } => commands::cmd_train(&load_config(&cli)?, verbalizer.clone()),
        Command::Evaluate {
            checkpoint,
            verbalizer,
            out,
        } => commands::cmd_evaluate(&load_config(&cli)?, checkpoint, verbalizer.clone(), out.clone()),
        Command::RunExperiment => experiment::cmd_run_experiment(&load_config(&cli)?),
        Command::SearchConjunction {
            shortlist,
            evaluate_shortlist,
        } => commands::cmd_search_conjunction(
            &load_config(&cli)?,
            shortlist.clone(),
            *evaluate_shortlist,
        ),
        Command::Interpret {
            checkpoint,
            verbalizer,
        } => commands::cmd_interpret(&load_config(&cli)?, checkpoint, verbalizer),
        Command::Report { run_dirs } => experiment::cmd_report(run_dirs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
