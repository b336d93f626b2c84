//! `natlab`: run NAT traversal scenarios from the command line.
//!
//! Exit status: 0 on success, 2 when traversal ran but failed, 1 on bad input.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "natlab", version, about = "Deterministic NAT traversal laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario file; commands that need one fall back to the built-in
    /// four-carrier setup.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long, global = true, env = "NATLAB_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub out: Option<OutFormat>,
    /// Trials per k (montecarlo).
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Comma-separated probe counts (montecarlo, estimate birthday, birthday rung).
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Vec<u64>,
    /// Ladder subset, e.g. `simple-punch,birthday,relay`.
    #[arg(long, global = true)]
    pub policy: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutFormat {
    Json,
    Text,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify the NAT in front of every peer.
    Classify,
    /// Connect two peers through the strategy ladder.
    Punch {
        /// Initiating peer (default: first declared).
        #[arg(long)]
        from: Option<String>,
        /// Responding peer (default: second declared).
        #[arg(long)]
        to: Option<String>,
    },
    /// Run the ladder between every ordered pair of carriers.
    Matrix,
    /// Sweep birthday probe counts against simulated trials.
    Montecarlo {
        /// External port space P of both NATs.
        #[arg(long, default_value_t = 1024)]
        port_space: u16,
    },
    /// Evaluate closed-form estimates.
    Estimate {
        #[command(subcommand)]
        what: Option<commands::Estimate>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Traversal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Traversal(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = commands::execute(&cli.command, &cli.common).and_then(|r| {
        print!("{}", r.body);
        match r.failure {
            Some(f) => Err(CliError::Traversal(f)),
            None => Ok(()),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("natlab: {e}");
            ExitCode::from(e.code())
        }
    }
}
