#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod output;
mod problem;

use commands::{BenchArgs, RunArgs, SimulateArgs, VerifyArgs};

/// Asynchronous coordinate-update experiments.
#[derive(Debug, Parser)]
#[command(name = "asyncoord", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deterministic replay of an asynchronous run with an explicit delay model
    Simulate(SimulateArgs),
    /// Multithreaded run on shared memory
    Run(RunArgs),
    /// Check operator and convergence properties numerically
    Verify(VerifyArgs),
    /// Time the threaded engine across agent counts
    Bench(BenchArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn from_core(e: asyncoord::Error) -> Self {
        use asyncoord::Error as E;
        match e {
            E::InvalidArgument(msg) => CliError::Config(msg),
            E::Parse { .. } | E::Io(_) => CliError::Data(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Run(a) => commands::run(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("asyncoord: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
