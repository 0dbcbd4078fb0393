use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = aisacs_cli::Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match aisacs_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", aisacs_cli::error_report(&e));
            ExitCode::FAILURE
        }
    }
}
