//! `tisp` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
//! failure, 5 output error.

mod args;
mod commands;
mod data;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Path(a) => commands::path(a),
        Command::Tune(a) => commands::tune(a),
        Command::Screen(a) => commands::screen(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Spectral(a) => commands::spectral(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tisp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
