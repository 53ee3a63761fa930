//! Command-line front end for `beliefcal`: CSV ingestion, run configuration,
//! and the `simulate`, `estimate`, `cape` and `weights` commands.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ConfigFile, RunConfig, SEED_ENV};

/// Exit codes: 0 success, 1 I/O, 2 configuration, 3 schema, 4 estimation.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Estimation(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
            CliError::Schema(_) => "schema",
            CliError::Estimation(_) => "estimation",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "beliefcal",
    version,
    about = "Belief-effect estimators for information provision experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a population; writes the dataset and `<stem>_truth.csv`.
    Simulate(Flags),
    /// Run the selected estimators on a dataset.
    Estimate(Flags),
    /// Conditional average partial effects by learning-rate bin.
    Cape(Flags),
    /// Implied weights of the design's standard estimator.
    Weights(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// Config file (`key = value`, `[section]` headers allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// panel, active or passive
    #[arg(long)]
    design: Option<String>,
    /// Comma-separated estimator names.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Bootstrap draws for standard errors (0 disables).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Falls back to the config file, then BELIEFCAL_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// json or csv
    #[arg(long)]
    format: Option<String>,
    /// Simulation truth table, for `weights` on simulated data.
    #[arg(long)]
    truth: Option<PathBuf>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                ConfigFile::parse(&text)?
            }
            None => ConfigFile::default(),
        };
        let path = |p: &PathBuf| p.display().to_string();
        let overrides: [(&str, Option<String>); 9] = [
            ("input", self.input.as_ref().map(path)),
            ("output", self.output.as_ref().map(path)),
            ("truth", self.truth.as_ref().map(path)),
            ("design", self.design.clone()),
            ("estimators", self.estimators.clone()),
            ("lls.bandwidth", self.bandwidth.map(|b| b.to_string())),
            ("bootstrap.draws", self.bootstrap.map(|b| b.to_string())),
            ("seed", self.seed.map(|s| s.to_string())),
            ("format", self.format.clone()),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                file.set(k, v);
            }
        }
        let env = std::env::var(SEED_ENV).ok();
        RunConfig::resolve(&file, env.as_deref())
    }
}

/// Parse arguments, run one command and return the process exit code.
/// Failures are reported on stderr as a single JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Simulate(f) => f.resolve().and_then(|r| commands::simulate(&r)),
        Command::Estimate(f) => f.resolve().and_then(|r| commands::estimate(&r)),
        Command::Cape(f) => f.resolve().and_then(|r| commands::cape(&r)),
        Command::Weights(f) => f.resolve().and_then(|r| commands::weights(&r)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            e.exit_code()
        }
    }
}
