//! `pwsm`: limit cycles, infinitesimal phase response curves and phase
//! locking for piecewise-smooth oscillators.

mod commands;
mod config;
mod svg;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CoupleArgs, ExportArgs, FindCycleArgs, IprcArgs, OracleArgs, SimulateArgs, VerifyArgs};

#[derive(Parser, Debug)]
#[command(name = "pwsm", version, about = "Phase response of piecewise-smooth limit cycles")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "PWSM_OUT", default_value = "pwsm-out")]
    out: PathBuf,
    /// Worker threads for the data-parallel sweeps (default: all cores).
    #[arg(long, global = true, value_parser = config::count)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one trajectory and record its crossings.
    Simulate(SimulateArgs),
    /// Locate the limit cycle and its Floquet multipliers.
    FindCycle(FindCycleArgs),
    /// Compute the piecewise iPRC, optionally overlaid with oracle samples.
    Iprc(IprcArgs),
    /// Measure the iPRC by direct perturbation.
    Oracle(OracleArgs),
    /// Interaction function and phase locking of two coupled copies.
    Couple(CoupleArgs),
    /// Run the invariant suites and write a JSON report.
    Verify(VerifyArgs),
    /// Write the system as JSON.
    ExportSystem(ExportArgs),
}

/// Name of the library error behind `e`, for standard error.
pub(crate) fn error_name(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<pwsm::Error>() {
            return err.name();
        }
        if let Some(name) = verify::reported_name(cause) {
            return name;
        }
        if cause.is::<std::io::Error>() {
            return "Io";
        }
        if cause.is::<serde_json::Error>() {
            return "Json";
        }
    }
    "InvalidInput"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        pwsm::par::set_threads(n);
    }
    let outcome = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &cli.out),
        Command::FindCycle(a) => commands::find_cycle(a, &cli.out),
        Command::Iprc(a) => commands::iprc(a, &cli.out),
        Command::Oracle(a) => commands::oracle(a, &cli.out),
        Command::Couple(a) => commands::couple(a, &cli.out),
        Command::Verify(a) => commands::verify(a, &cli.out),
        Command::ExportSystem(a) => commands::export_system(a, &cli.out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let unknown = e.chain().any(|c| matches!(c.downcast_ref(), Some(pwsm::Error::UnknownModel(_))));
            if unknown {
                eprintln!("error: {e} (known models: {})", pwsm::zoo::MODEL_NAMES.join(", "));
                return ExitCode::from(2);
            }
            eprintln!("error: {}: {e:#}", error_name(&e));
            ExitCode::FAILURE
        }
    }
}
