//! `kernel-infer`: config-driven reconstruction experiments.
//!
//! Exit codes: 0 success, 1 numerical non-convergence, 2 bad input or
//! config, 3 I/O failure. `KERNEL_INFER_THREADS` caps the worker count.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration (exit code 2).
    Config(String),
    /// Numerical failure: blow-up or non-convergence (exit code 1).
    Numeric(String),
    /// Filesystem failure (exit code 3).
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numerical error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<kernel_infer::Error> for CliError {
    fn from(error: kernel_infer::Error) -> Self {
        use kernel_infer::Error as E;
        match error {
            E::Io(inner) => CliError::Io(inner.to_string()),
            E::Unstable { .. }
            | E::NonFiniteKernel { .. }
            | E::DegenerateMisfit(_)
            | E::ConvolutionContract(_) => CliError::Numeric(error.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "kernel-infer", version, about = "Interaction-kernel reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `out_dir`, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample initial data and write trajectory CSVs.
    Simulate(CommonArgs),
    /// Reconstruct the kernel from simulated or stored trajectories.
    Learn {
        #[command(flatten)]
        common: CommonArgs,
        /// Learn from a stored trajectory CSV instead of simulating.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Use exact model velocities instead of backward differences
        /// (closed-loop testing).
        #[arg(long)]
        exact_velocities: bool,
    },
    /// Solve the problem across an ascending constraint grid.
    SweepM(CommonArgs),
    /// Average reconstructions over independent initial draws.
    Montecarlo(CommonArgs),
    /// Coercivity identities, empirical c_T sweep, trajectory bound.
    Diagnose(CommonArgs),
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run() -> Result<commands::CommandOutcome, CliError> {
    if let Ok(threads) = std::env::var("KERNEL_INFER_THREADS") {
        let count: usize = threads
            .parse()
            .map_err(|_| CliError::Config(format!("KERNEL_INFER_THREADS = `{threads}` is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build_global()
            .ok();
    }
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(common) => {
            let config = load(common)?;
            commands::cmd_simulate(&config, common.out.as_deref())
        }
        Command::Learn {
            common,
            trajectory,
            exact_velocities,
        } => {
            let config = load(common)?;
            commands::cmd_learn(
                &config,
                common.out.as_deref(),
                trajectory.as_deref(),
                *exact_velocities,
            )
        }
        Command::SweepM(common) => {
            let config = load(common)?;
            commands::cmd_sweep_m(&config, common.out.as_deref())
        }
        Command::Montecarlo(common) => {
            let config = load(common)?;
            commands::cmd_montecarlo(&config, common.out.as_deref())
        }
        Command::Diagnose(common) => {
            let config = load(common)?;
            commands::cmd_diagnose(&config, common.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(outcome) => {
            for artifact in &outcome.artifacts {
                println!("{}", artifact.display());
            }
            if outcome.all_converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("warning: a solve hit the iteration cap; results written anyway");
                ExitCode::from(1)
            }
        }
        Err(error) => {
            eprintln!("{error}");
            ExitCode::from(error.exit_code())
        }
    }
}
