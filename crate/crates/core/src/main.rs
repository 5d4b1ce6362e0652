use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use mgpkit::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgpkit status=error exit={} message={e}", e.exit_code());
            ExitCode::from(e.exit_code())
        }
    }
}
