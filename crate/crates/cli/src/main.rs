mod args;
mod cmd;
mod config;
mod error;
mod output;

use args::{Cli, Command};
use clap::{CommandFactory, Parser};
use error::{CliError, CliResult};
use std::process::ExitCode;

fn run() -> CliResult<()> {
    let argv = config::expand(std::env::args_os().collect(), &Cli::command())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            return Err(CliError::usage(text.join(" ").trim_start_matches("error: ").to_string()));
        }
    };
    match &cli.command {
        Command::Train(a) => cmd::train::run(a),
        Command::Project(a) => cmd::project::run(a),
        Command::Evaluate(a) => cmd::evaluate::run(a),
        Command::Inpaint(a) => cmd::inpaint::run(a),
        Command::CompareScores(a) => cmd::scores::run(a),
        Command::Convergence(a) => cmd::convergence::run(a),
        Command::MakeData(a) => cmd::data::run(a),
    }
    .map_err(|e| {
        if e.kind == "usage" {
            CliError::usage(format!("{}: {}", cli.command.name(), e.message))
        } else {
            e
        }
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
