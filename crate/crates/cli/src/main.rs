//! `memwave`: analysis, simulation and stationarity diagnostics for damped
//! stochastic wave equations with memory.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 failing
//! `verify` criterion, 3 simulation divergence or unstable step.

mod commands;
mod config;
mod error;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{Experiment, Overrides};
use error::CliError;
use output::Output;

#[derive(Parser, Debug)]
#[command(name = "memwave", version, about = "Damped stochastic wave equations with memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Growth and resolvent bounds, delay criteria and the Green operator.
    Analyze(Common),
    /// Monte-Carlo moments, a sample trajectory and paired-path contraction.
    Simulate(Common),
    /// Sufficient-condition verdict and Cauchy-in-law diagnostics.
    Stationary(Common),
    /// Desk-scale self-checks; exits with 2 when a check fails.
    Verify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `simulation.master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte-Carlo paths (overrides `simulation.paths`).
    #[arg(long)]
    paths: Option<u64>,
    /// Number of retained modes.
    #[arg(long)]
    modes: Option<usize>,
}

fn run(name: &str, common: &Common) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", common.config.display())))?;
    let overrides = Overrides {
        seed: common.seed,
        paths: common.paths,
        modes: common.modes,
    };
    let exp = Experiment::load(raw, overrides)?;
    let dir = common.out.clone().unwrap_or_else(|| exp.config.output.directory.clone());
    let mut out = Output::create(&dir, name, &exp, &overrides)?;
    match name {
        "analyze" => commands::analyze(&exp, &mut out)?,
        "simulate" => commands::simulate(&exp, &mut out)?,
        "stationary" => {
            commands::stationary(&exp, &mut out)?;
        }
        _ => {
            let checks = verify::run(&exp, &mut out)?;
            out.finish()?;
            let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.to_string()).collect();
            return if failed.is_empty() { Ok(()) } else { Err(CliError::Criterion(failed)) };
        }
    }
    out.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (name, common) = match &cli.command {
        Command::Analyze(c) => ("analyze", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Stationary(c) => ("stationary", c),
        Command::Verify(c) => ("verify", c),
    };
    match run(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
