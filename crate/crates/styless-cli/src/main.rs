//! Operator entry point: train models, run attacks, evaluate transfer,
//! drive ablations, and emit loss-gap diagnostics.

mod commands;
mod config_file;
mod errors;
mod manifest;
mod sources;

use clap::{Parser, Subcommand};
use errors::CliError;

#[derive(Parser)]
#[command(
    name = "styless",
    version,
    about = "Desk-scale transferable-attack laboratory",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one classifier and write an SLCK checkpoint.
    Train(commands::train::TrainArgs),
    /// Attack a dataset slice with a surrogate (or ensemble) and write the
    /// adversarial dataset plus a JSON sidecar.
    Attack(commands::attack::AttackArgs),
    /// Evaluate a finished attack against target checkpoints.
    Eval(commands::eval::EvalArgs),
    /// Sweep one experiment axis and report per-point success rates.
    Ablate(commands::ablate::AblateArgs),
    /// Emit the per-iteration loss-gap diagnostic for a baseline attack and
    /// its style-injected counterpart.
    Diagnose(commands::diagnose::DiagnoseArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("STYLESS_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| CliError::Usage(format!("STYLESS_THREADS='{value}' is not a number")))?;
    if n == 0 {
        return Err(CliError::Usage("STYLESS_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => errors::EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Attack(args) => commands::attack::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::Diagnose(args) => commands::diagnose::run(args),
    });

    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
