use std::process::ExitCode;

use clap::Parser;

use projwass_cli::app::{execute, write_outcome, Cli, Command};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let is_experiment = matches!(cli.command, Command::Experiment(_));
    let result = execute(&cli, &args).and_then(|outcome| write_outcome(&outcome, is_experiment));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
