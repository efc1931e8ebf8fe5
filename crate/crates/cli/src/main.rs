//! `shm`: verification suites, diagnostics, training, evaluation,
//! benchmarks and export.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error,
//! 3 numeric abort.

mod bench;
mod commands;
mod export;
mod manifest;
mod suites;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "shm", version, about = "Stable Hadamard memory toolkit")]
struct Cli {
    /// Cap on worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run verification suites.
    Verify(commands::VerifyArgs),
    /// Cumulative-product curves, Monte-Carlo checks and heatmaps.
    Diag(commands::DiagArgs),
    /// Train from a config file.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint.
    Eval(commands::EvalArgs),
    /// Time sequential against scan evaluation.
    Bench(bench::BenchArgs),
    /// Collate a run directory into figure-ready CSVs.
    Export(export::ExportArgs),
}

pub enum Failure {
    Verification(String),
    Usage(String),
    Numeric(String),
    Other(String),
}

impl From<shm_core::Error> for Failure {
    fn from(e: shm_core::Error) -> Self {
        use shm_core::Error as E;
        match e {
            E::Numeric { .. } | E::Diverged { .. } => Failure::Numeric(e.to_string()),
            E::Config(_) | E::Range(_) | E::Dimension(_) | E::Checkpoint(_) | E::Protocol(_) => {
                Failure::Usage(e.to_string())
            }
            E::Io(_) => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// `--out`, else `$SHM_OUT_DIR/<command>`, else `shm-out/<command>`.
pub fn out_dir(flag: &Option<PathBuf>, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.clone();
    }
    let root = std::env::var_os("SHM_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("shm-out"));
    root.join(command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let threads = rayon::current_num_threads();
    let result = match &cli.command {
        Command::Verify(a) => commands::verify(a, threads),
        Command::Diag(a) => commands::diag(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Bench(a) => bench::run(a, threads),
        Command::Export(a) => export::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric abort: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
