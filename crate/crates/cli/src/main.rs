//! `gploo`: fit Gaussian latent variable models and benchmark fast
//! leave-one-out cross-validation estimators against a brute-force oracle.
//!
//! Exit codes: 0 success, 1 inference failure, 2 input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gploo_cli::config::ExperimentConfig;
use gploo_cli::{runner, CliError};

#[derive(Parser)]
#[command(
    name = "gploo",
    version,
    about = "Gaussian latent variable models with fast leave-one-out cross-validation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for parallel sections (default: all cores). Results do
    /// not depend on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit hyperparameters and the latent posterior; write fit_summary.json
    Fit(RunArgs),
    /// Run every requested LOO method, compare against brute force; write
    /// one JSON report per method plus comparison.csv
    Loo(RunArgs),
    /// Flexibility sweep over length-scale multipliers; write sweep.csv
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Override: dataset CSV path
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override: output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override: RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override: comma-separated method list
    #[arg(long)]
    methods: Option<String>,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply_overrides(
        args.data.clone(),
        args.out.clone(),
        args.seed,
        args.methods.as_deref(),
    )?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    match &cli.cmd {
        Cmd::Fit(args) => runner::run_fit(&load(args)?),
        Cmd::Loo(args) => runner::run_loo(&load(args)?),
        Cmd::Sweep(args) => runner::run_sweep(&load(args)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
