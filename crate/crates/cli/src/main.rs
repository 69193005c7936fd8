//! Command-line front end for the refinement pipeline.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
//! failure inside a solver.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use otdenoise::Error;

use commands::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalUnderflow { .. } | Error::NonFinite { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
