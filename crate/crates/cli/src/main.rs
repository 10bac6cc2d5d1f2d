//! Command-line front end. Exit status: 0 on success, 1 on a configuration or
//! input error, 2 when the integration blows up.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("numerical blowup at t = {0}")]
    Blowup(f64),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Core errors raised while checking user input are configuration errors.
    pub fn config_from(e: flocklab::Error) -> Self {
        match e {
            flocklab::Error::NumericalBlowup { t } => CliError::Blowup(t),
            other => CliError::Config(other.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Blowup(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "flocklab", version, about = "Alignment dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override any field, e.g. `--set integration.h=0.01` (value parsed as JSON).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    sample_every: Option<usize>,
    /// Seed of the sampled initial state.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps_a: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory; writes a CSV time series and a JSON summary.
    Simulate(ConfigArgs),
    /// Event-driven sticky-particle run; writes a JSON event log and a CSV of cluster counts.
    Sticky(ConfigArgs),
    /// Seeded Monte Carlo sweep; writes per-trial JSONL and a JSON aggregate.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        master_seed: Option<u64>,
        /// Worker threads (default: config, then FLOCKLAB_PARALLELISM, then all cores).
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Search an integer relation q.v = 0 with |q_k| <= bound.
    Relations {
        /// Comma separated components.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        v: Vec<f64>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        bound: i64,
        /// Embedding scale (default 10/tol).
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Fit exponential and power-law decay rates to columns of a time-series CSV.
    Analyze {
        #[arg(long)]
        csv: PathBuf,
        /// Column to fit; repeat for several (default V2 and align_diam).
        #[arg(long)]
        column: Vec<String>,
        /// Fitting window `lo,hi` (default: 1 to the last time).
        #[arg(long, value_delimiter = ',', num_args = 2)]
        window: Option<Vec<f64>>,
    },
    /// Check the sign and contact conditions of the configured kernel and potential.
    Validate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Radius of the checked interval (default: kernel support, else 10).
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = flocklab::model::DEFAULT_VALIDATION_GRID)]
        grid: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match commands::run(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
