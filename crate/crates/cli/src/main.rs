//! `sidestream`: batch driver for the side-channel experiments.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{ExperimentConfig, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input {0} (run the earlier step first)")]
    MissingInput(PathBuf),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn csv(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) | CliError::Runtime(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    sidestream::generators::GeneratorError,
    sidestream::observer::ObserverError,
    sidestream::features::FeatureError,
    sidestream::models::ModelError
);

impl From<sidestream::attack::AttackError> for CliError {
    fn from(e: sidestream::attack::AttackError) -> Self {
        match e {
            sidestream::attack::AttackError::InvalidConfig(m) => CliError::Config(m),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sidestream", version, about = "Timing side-channel experiments on enclave stream processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON). Flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// simulated | measured
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Victim query (repeatable), e.g. Q2.
    #[arg(long, global = true)]
    query: Vec<String>,
    /// Model family: rf | gbt. Selects that family's standard grid.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Evaluation setting: 1 (even split) | 2 (leave one query out).
    #[arg(long, global = true)]
    setting: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write the input streams as JSONL.
    Generate,
    /// Profile the catalog operators into labeled timing traces.
    Profile,
    /// Turn traces into the CDF feature dataset.
    Featurize,
    /// Grid-search and fit the classifier and parameter regressors.
    Train,
    /// Attack victim queries and score query recovery.
    Attack,
    /// Attack with and without the configured mitigation.
    Mitigate,
    /// Emit CDF curves, confusion matrix and QRSR tables as CSV.
    Report,
    /// Print the effective config.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let o = Overrides {
        seed: cli.seed,
        mode: cli.mode,
        out: cli.out,
        query: cli.query,
        model: cli.model,
        setting: cli.setting,
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref())?.apply(&o)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Profile => commands::profile(&cfg),
        Command::Featurize => commands::featurize(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Attack => commands::attack(&cfg),
        Command::Mitigate => commands::mitigate(&cfg),
        Command::Report => commands::report(&cfg),
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("plain data"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
