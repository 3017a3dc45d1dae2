//! Command-line entry point for the market simulator.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use regmkt::calibration::{MispricingSign, ReturnConvention};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "regmkt", version, about = "Agent-based market simulator with regulatory overlays")]
struct Cli {
    /// Path to a TOML config file; omitted sections use the standard
    /// calibration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (falls back to the config, then REGMKT_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Runs per experiment cell.
    #[arg(long, global = true)]
    runs: Option<u64>,

    /// Worker threads for experiment fan-out.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Regulatory overlays as a comma list of ssban, var, tt.
    #[arg(long, global = true)]
    regime: Option<String>,

    /// Transaction-tax rate override (also the grid's taxed-cell level).
    #[arg(long, global = true)]
    tax_level: Option<f64>,

    /// Mispricing sign convention (sensitivity switch).
    #[arg(long, global = true, value_enum)]
    mispricing_sign: Option<MispricingSignArg>,

    /// Return convention for metrics and VaR windows.
    #[arg(long, global = true, value_enum)]
    return_convention: Option<ReturnConventionArg>,

    /// Deduct the transaction tax from wealth after each trade.
    #[arg(long, global = true)]
    tax_deduction: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum MispricingSignArg {
    PerceivedMinusPrice,
    PriceMinusPerceived,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum ReturnConventionArg {
    Log,
    Simple,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write prices.csv, metrics.json (and
    /// trades.csv when per-run trajectories are enabled).
    Simulate,
    /// Run the 2x2x2 regulatory grid with common random numbers; write
    /// grid.csv and regression.csv.
    Grid,
    /// Run the transaction-tax level sweep; write sweep.csv and
    /// sweep_by_regime.csv.
    Sweep,
    /// Write the return-distribution diagnostics (density.csv, qq.csv,
    /// returns.csv, acf.csv) for one run.
    Stylized {
        /// Use seeded Gaussian returns of this length instead of a run.
        #[arg(long)]
        synthetic: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regmkt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let overrides = config::Overrides {
        seed: cli.seed,
        runs: cli.runs,
        jobs: cli.jobs,
        out: cli.out.clone(),
        regime: cli.regime.clone(),
        tax_level: cli.tax_level,
        mispricing_sign: cli.mispricing_sign.map(|s| match s {
            MispricingSignArg::PerceivedMinusPrice => MispricingSign::PerceivedMinusPrice,
            MispricingSignArg::PriceMinusPerceived => MispricingSign::PriceMinusPerceived,
        }),
        return_convention: cli.return_convention.map(|s| match s {
            ReturnConventionArg::Log => ReturnConvention::Log,
            ReturnConventionArg::Simple => ReturnConvention::Simple,
        }),
        tax_deduction: cli.tax_deduction.then_some(true),
    };
    let resolved = config::load(cli.config.as_deref(), &overrides)?;
    if let Some(jobs) = resolved.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&resolved),
        Command::Grid => commands::cmd_grid(&resolved),
        Command::Sweep => commands::cmd_sweep(&resolved),
        Command::Stylized { synthetic } => commands::cmd_stylized(&resolved, synthetic),
    }
}
