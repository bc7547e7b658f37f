//! `affinity`: command-line driver for the affinity-scheduling toolkit.
//!
//! Exit codes: 0 on success, 1 when a model invariant fails during a run,
//! 2 on a configuration or output error.

mod commands;
mod config;
mod error;
mod family;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{resolve, CoupleArgs, FixpointArgs, FluidArgs, Lambda0Args, SimulateArgs, TablesArgs};

#[derive(Debug, Parser)]
#[command(name = "affinity", version, about = "Load balancing with job-server affinity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the Markov chain and write a trajectory CSV and summary JSON
    Simulate(SimulateArgs),
    /// Integrate the fluid limit and write a trajectory CSV
    Fluid(FluidArgs),
    /// Fixed points, their stability and metrics as JSON
    Fixpoint(FixpointArgs),
    /// Minimum-degree or d1-threshold tables as CSV
    Tables(TablesArgs),
    /// Optimal split rate of a selection family as JSON
    Lambda0(Lambda0Args),
    /// Coupled runs against a reference system with a majorization check
    Couple(CoupleArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => resolve(a, "simulate").and_then(commands::simulate),
        Command::Fluid(a) => resolve(a, "fluid").and_then(commands::fluid),
        Command::Fixpoint(a) => resolve(a, "fixpoint").and_then(commands::fixpoint),
        Command::Tables(a) => resolve(a, "tables").and_then(commands::tables),
        Command::Lambda0(a) => resolve(a, "lambda0").and_then(commands::lambda0),
        Command::Couple(a) => resolve(a, "couple").and_then(commands::couple),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
