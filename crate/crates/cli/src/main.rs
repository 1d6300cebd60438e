//! `mxdog` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure (including a failed
//! gradient check), 2 usage error, 3 non-finite loss.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    NonFinite(String),
    /// The command ran but its check did not pass; the report is already printed.
    Failed(String),
}

impl CliError {
    fn usage(e: mxdog::Error) -> Self {
        CliError::Usage(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
            CliError::NonFinite(_) => 3,
        }
    }
}

impl From<mxdog::Error> for CliError {
    fn from(e: mxdog::Error) -> Self {
        match e {
            mxdog::Error::NonFinite(_) => CliError::NonFinite(format!("numerical divergence: {e}")),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let result = match cli.command {
        Command::Filter(a) => commands::filter(a),
        Command::Stylize(a) => commands::stylize(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
        Command::InspectWeights(a) => commands::inspect_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m)
                | CliError::Runtime(m)
                | CliError::NonFinite(m)
                | CliError::Failed(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
