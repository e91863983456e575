//! `fuelgrid` command line: solve, simulate, verify and bench runs driven
//! by a JSON run configuration.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Mode;

#[derive(Parser)]
#[command(name = "fuelgrid", version, about = "Finite-fuel stochastic control on a lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread cap; overrides `threads` in the config.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve on the lattice and write the value and policy fields.
    Solve(Common),
    /// Simulate a policy and estimate its payoff.
    Simulate(Common),
    /// Run the verification suite; exits 1 if any check fails.
    Verify(Common),
    /// Solve and simulate every gallery instance.
    Bench(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Solve(c) => (Mode::Solve, c),
        Command::Simulate(c) => (Mode::Simulate, c),
        Command::Verify(c) => (Mode::Verify, c),
        Command::Bench(c) => (Mode::Bench, c),
    };
    match run::run(mode, &common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
