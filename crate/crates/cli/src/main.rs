use clap::Parser;
use twsc_cli::cli::Cli;

fn main() -> std::process::ExitCode {
    match twsc_cli::run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
