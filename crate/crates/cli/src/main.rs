//! `ehrtraj`: synthetic cohorts, dataset building, training and evaluation.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ehrtraj", version, about = "Disease-trajectory modelling on coded health records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with the subcommand's settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic cohort from a hazard specification.
    Synth(commands::SynthArgs),
    /// Normalise codes, build the vocabulary and token sequences.
    BuildDataset(commands::BuildArgs),
    /// Train a model on a built dataset.
    Train(commands::TrainArgs),
    /// Case-control evaluation across horizons.
    Evaluate(commands::EvaluateArgs),
    /// Prospective evaluation after a cutoff and gap.
    Prospective(commands::ProspectiveArgs),
    /// Predicted versus observed incidence after a cutoff.
    Calibrate(commands::CalibrateArgs),
    /// Grouped tables and long-format plot data from report CSVs.
    Report(commands::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Prospective(a) => commands::prospective(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ehrtraj: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
