//! `mfg-evo` command-line front end.
//!
//! Exit codes: 0 success, 1 domain failure (invalid game, aborted integration, no
//! equilibrium), 2 usage or parse failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunArgs, Settings};

#[derive(Parser)]
#[command(name = "mfg-evo", version, about = "Mean field games with evolutionary policy revision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a game spec and print every violated invariant.
    Validate(RunArgs),
    /// Integrate the mean dynamic; writes trajectory.csv, diagnostics.csv and summary.json.
    Integrate(RunArgs),
    /// Simulate finite populations; writes one CSV per replication, or a convergence study with --ns.
    Simulate(RunArgs),
    /// Solve for and certify equilibria.
    Equilibrium(RunArgs),
}

pub enum Failure {
    Usage(String),
    Domain(String),
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("MFG_EVO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("MFG_EVO_THREADS must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::Validate(a) => commands::validate(&Settings::resolve(&a)?),
        Command::Integrate(a) => commands::integrate_cmd(&Settings::resolve(&a)?),
        Command::Simulate(a) => commands::simulate_cmd(&Settings::resolve(&a)?),
        Command::Equilibrium(a) => commands::equilibrium_cmd(&Settings::resolve(&a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
