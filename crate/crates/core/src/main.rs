use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use phasedamage::cli;

/// Phase separation with elasticity and damage: simulate, audit, verify.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration and write states, ledger, audit and manifest.
    Simulate { config: PathBuf },
    /// Re-audit a stored trajectory.
    Audit {
        config: PathBuf,
        trajectory_dir: PathBuf,
        /// Also write the audit table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare the step solver with dense brute-force minimization.
    OracleCheck {
        #[arg(long, value_enum, default_value_t = Suite::Small)]
        suite: Suite,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Small,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let outcome = match args.command {
        Command::Simulate { config } => cli::simulate(&config, &mut out, &mut err),
        Command::Audit { config, trajectory_dir, csv } => cli::audit_command(&config, &trajectory_dir, csv.as_deref(), &mut out, &mut err),
        Command::OracleCheck { suite: Suite::Small } => cli::oracle_command(&mut out, &mut err),
    };
    ExitCode::from(outcome.exit_code() as u8)
}
