//! `pgee` command-line front-end.

mod args;
mod commands;
mod plot;

use std::fs;
use std::io::Write;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Failure of a subcommand; exit code 1 for usage and input problems, 2 for numerical ones.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Numerical(_) => 2,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let bytes = match &cli.command {
        Command::Fit(a) => commands::fit(a, cli.format),
        Command::Cv(a) => commands::cv(a, cli.format),
        Command::Path(a) => commands::path(a, cli.format),
        Command::Simulate(a) => commands::simulate(a, cli.format),
        Command::Bench(a) => commands::bench(a, cli.format),
    }?;
    match &cli.output {
        Some(path) => fs::write(path, &bytes)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Usage),
        None => std::io::stdout()
            .write_all(&bytes)
            .context("writing to stdout")
            .map_err(CliError::Usage),
    }
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(CliError::Usage(anyhow!("--threads must be at least 1"))),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::Usage(e.into())),
        },
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(err) | CliError::Numerical(err)) = &e;
            eprintln!("error: {}", describe(err));
            ExitCode::from(e.exit_code())
        }
    }
}
