mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Outcome;
use crate::error::CliError;

/// Exit status when some directions of a sweep failed but output was written.
const PARTIAL_EXIT: u8 = 3;

fn threads(command: &Command) -> Option<usize> {
    match command {
        Command::Solve(a) | Command::Tensors(a) => a.threads,
        Command::Boundary(a) | Command::Cpf(a) | Command::Compare(a) => a.common.threads,
    }
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = threads(&cli.command) {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Tensors(a) => commands::tensors(a),
        Command::Boundary(a) => commands::boundary(a),
        Command::Cpf(a) => commands::cpf(a),
        Command::Compare(a) => commands::compare(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(PARTIAL_EXIT),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
