//! `bregbox`: runs Bregman iterations on benchmark problems, sweeps step-size
//! schedules and runs the verification suites.
//!
//! Exit codes: 0 success, 1 failure (including failed verification), 2 invalid
//! configuration, 3 subproblem solver did not converge.

mod config;
mod error;
mod output;
mod runner;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_CONFIG, EXIT_OK};
use crate::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "bregbox", version, about = "Bregman iteration for box-constrained linear-quadratic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration; writes history.csv and summary.txt.
    Run(RunArgs),
    /// Run every schedule variant of a configuration; writes sweep.csv.
    Sweep(RunArgs),
    /// Run a verification suite and print a pass/fail table.
    Verify {
        /// adjoint, oracle, rates or invariants
        #[arg(value_name = "SUITE", required_unless_present = "suite_flag", conflicts_with = "suite_flag")]
        suite: Option<Suite>,
        #[arg(long = "suite", value_name = "SUITE")]
        suite_flag: Option<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Benchmark seed; overrides `benchmark.seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.benchmark.seed = seed;
        }
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => runner::cmd_run(&args.load()?),
        Command::Sweep(args) => runner::cmd_sweep(&args.load()?),
        Command::Verify { suite, suite_flag, seed } => {
            let suite = suite.or(suite_flag).expect("clap requires a suite");
            verify::cmd_verify(suite, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
