//! `credo` — command-line driver for the distributed estimation
//! experiments.
//!
//! Verbs: `synth` (Monte Carlo estimator comparison), `real` (replay a
//! regression dataset), `check-stats` (gate/Laplacian moment
//! identities), `rates` (log-log slope fits against theory), and
//! `covariance` (scaled-error covariance against the closed form).
//! Exit codes are a stable contract: 0 success, 1 runtime or
//! statistical failure, 2 usage or configuration error.

mod analysis;
mod config;
mod real;
mod setup;
mod stats;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "credo", version, about = "Distributed estimation experiment driver")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Monte Carlo comparison of the estimators on a synthetic model.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Replay a regression dataset through the distributed estimators.
    Real {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Monte Carlo checks of the gate and Laplacian moment identities.
    CheckStats {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the configured draw count.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Fit log-log convergence rates and compare with the theory slopes.
    Rates {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Compare the scaled-error covariance with the closed form.
    Covariance {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: RunOverrides,
    },
}

impl Verb {
    fn common(&self) -> &CommonArgs {
        match self {
            Verb::Synth { common, .. }
            | Verb::Real { common, .. }
            | Verb::CheckStats { common, .. }
            | Verb::Rates { common, .. }
            | Verb::Covariance { common, .. } => common,
        }
    }

}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file.
    config: PathBuf,
    /// Output directory for artifacts (default: a timestamped directory
    /// under the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; wins over the CREDO_SEED environment variable,
    /// which in turn wins over the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for run ensembles (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = ArgAction::Count)]
    verbose: u8,
}

/// Quick-iteration overrides shared by the ensemble-running verbs.
#[derive(Args)]
struct RunOverrides {
    /// Override the configured run count.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the configured horizon.
    #[arg(long)]
    horizon: Option<u64>,
}

/// A failed invocation, split by which exit code it owes the caller.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: runtime or statistical failure.
    Runtime(String),
    /// Exit 2: usage or configuration error.
    Usage(String),
}

impl Failure {
    pub fn runtime(message: impl Into<String>) -> Self {
        Failure::Runtime(message.into())
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure::Usage(message.into())
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<credo_core::harness::HarnessError> for Failure {
    fn from(e: credo_core::harness::HarnessError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<credo_core::ingest::IngestError> for Failure {
    fn from(e: credo_core::ingest::IngestError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<credo_core::schedules::ScheduleError> for Failure {
    fn from(e: credo_core::schedules::ScheduleError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verb.common().verbose);
    let result = init_workers(cli.verb.common().workers).and_then(|()| match &cli.verb {
        Verb::Synth { common, overrides } => synth::run(common, overrides),
        Verb::Real { common, overrides } => real::run(common, overrides),
        Verb::CheckStats { common, draws } => stats::run(common, *draws),
        Verb::Rates { common, overrides } => analysis::rates(common, overrides),
        Verb::Covariance { common, overrides } => analysis::covariance(common, overrides),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn init_workers(workers: Option<usize>) -> Result<(), Failure> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(Failure::usage("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::runtime(format!("cannot build worker pool: {e}")))
}

/// Seed precedence: `--seed` flag, then `CREDO_SEED`, then the config.
pub fn resolve_seed(config_value: u64, flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("CREDO_SEED") {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            Failure::usage(format!("CREDO_SEED must be an unsigned integer, got {raw:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(config_value),
        Err(e) => Err(Failure::usage(format!("cannot read CREDO_SEED: {e}"))),
    }
}

/// Creates and returns the artifact directory for this invocation.
pub fn prepare_out_dir(flag: &Option<PathBuf>, verb: &str) -> Result<PathBuf, Failure> {
    let dir = match flag {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
            PathBuf::from(format!("credo-{verb}-{stamp}"))
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| {
        Failure::runtime(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    Ok(dir)
}
