mod args;
mod config;
mod plot;
mod run;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

fn main() -> ExitCode {
    let spec = args::Cli::command();
    let names: Vec<&str> = spec.get_subcommands().map(|c| c.get_name()).collect();
    let argv = match config::expand_config_args(std::env::args().collect(), &names) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = args::Cli::parse_from(argv);
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
