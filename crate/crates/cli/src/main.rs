//! `grnn`: runs gRNN experiments from TOML configuration files.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed check),
//! 2 configuration error.

mod config;
mod gradcheck;
mod output;
mod synth;
mod weather;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration; nothing was run.
    Config(String),
    Runtime(String),
}

impl From<grnn::GrnnError> for CliError {
    fn from(e: grnn::GrnnError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "grnn", version, about = "Graphical RNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate on an ARMA toy task; fails if the test loss misses the optimum by more than the tolerance.
    Synth(RunArgs),
    /// Ingest, clean and triangulate station data (or generate planted data).
    WeatherPrepare(RunArgs),
    /// Steady-state and linear baselines on prepared data.
    WeatherBaseline(RunArgs),
    /// Train every configured model on prepared data.
    WeatherTrain(RunArgs),
    /// Evaluate trained models and print the report table.
    WeatherEval(RunArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(RunArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML configuration file.
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory, relative to the output root.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Root for relative output directories.
    #[arg(long, env = "GRNN_OUTPUT_ROOT", default_value = "runs")]
    pub output_root: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::WeatherPrepare(a) => weather::prepare(a),
        Command::WeatherBaseline(a) => weather::baseline(a),
        Command::WeatherTrain(a) => weather::train(a),
        Command::WeatherEval(a) => weather::eval(a),
        Command::Gradcheck(a) => gradcheck::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
