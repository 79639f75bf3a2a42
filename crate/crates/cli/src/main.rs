mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bkmr-vi", version, about = "Variational BKMR fitting, GLS correction and coverage simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model to a CSV dataset.
    Fit(FitArgs),
    /// GLS-correct the covariate intervals of a previous fit.
    Gls(GlsArgs),
    /// Run the coverage simulation study.
    Simulate(SimulateArgs),
    /// Re-render tables from a simulation report and print a summary.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFlavor {
    Informative,
    Flat,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the simulation.
    #[arg(long, env = "BKMR_VI_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorFlavor>,
    /// Convergence tolerance on the objective.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GlsArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub input: PathBuf,
    /// Interval level (default 0.95).
    #[arg(long)]
    pub level: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `simulate` (or by `fit`).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Fit(args) => commands::fit::run(&args),
        Command::Gls(args) => commands::gls::run(&args),
        Command::Simulate(args) => commands::simulate::run(&args),
        Command::Report(args) => commands::report::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Model(bkmr_vi::Error::Fit { trace, .. }) = &e {
                eprintln!(
                    "fit stopped after {} iterations; last objective {:?}",
                    trace.iterations,
                    trace.objective_values.last()
                );
            }
            ExitCode::from(e.exit_code())
        }
    }
}
