use std::process::ExitCode;

use clap::Parser;
use thali_cli::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", serde_json::to_string_pretty(&e).unwrap_or_else(|_| e.to_string()));
            } else {
                eprintln!("error [{}]: {}", e.code, e.message);
            }
            ExitCode::FAILURE
        }
    }
}
