//! Batch driver: closed-loop and whole-cycle runs, parameter checks and mode
//! projection of logged trajectories.

mod project;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eocp::cycles::SpeedUnit;
use eocp::ParameterFile;

/// Exit status for I/O and configuration errors.
const EXIT_ERROR: u8 = 1;
/// Exit status when the run finished with solver failures or aborted.
const EXIT_SOLVER: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "eocp", version, about = "Embedded optimal control runs for a bi-modal parallel hybrid vehicle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its logs to an output directory.
    #[command(allow_negative_numbers = true)]
    Run(run::RunArgs),
    /// Check every invariant of a parameter file.
    ValidateParams {
        path: PathBuf,
    },
    /// Project the mode fractions of a trajectory CSV onto binary schedules.
    Project(project::ProjectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UnitArg {
    Mph,
    Mps,
    Kph,
}

impl From<UnitArg> for SpeedUnit {
    fn from(u: UnitArg) -> Self {
        match u {
            UnitArg::Mph => SpeedUnit::Mph,
            UnitArg::Mps => SpeedUnit::Mps,
            UnitArg::Kph => SpeedUnit::Kph,
        }
    }
}

fn validate_params(path: &std::path::Path) -> Result<u8, String> {
    let file = ParameterFile::read_unchecked(path).map_err(|e| e.to_string())?;
    let violations = file.violations();
    if violations.is_empty() {
        println!("{}: ok", path.display());
        return Ok(0);
    }
    for v in &violations {
        println!("{}: {v}", path.display());
    }
    Ok(EXIT_ERROR)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EOCP_LOG_LEVEL", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share the configuration error status.
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run::run(args),
        Command::ValidateParams { path } => validate_params(path),
        Command::Project(args) => project::project(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
