use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = csar::cli::Cli::parse();
    match csar::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
