// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Status;
use config::{Command, ConfigError, Overrides, RunConfig, Settings, SEED_ENV};
use kfc_core::exec::{configure_threads, Execution};

#[derive(Parser)]
#[command(name = "kfc", version, about = "Covariance-compensated Kalman filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rotation, PSD, sphere-bound and β-scan diagnostics
    Diagnose(Flags),
    /// β sweep over the configured models and estimators
    Sweep(Flags),
    /// Scalar random-walk demo with a fluctuating Jacobian
    DemoScalar(Flags),
    /// Each estimator at its own β on the configured model
    App(Flags),
}

#[derive(Args, Clone)]
struct Flags {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides KFC_SEED and the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    /// Monte-Carlo runs per cell
    #[arg(long)]
    runs: Option<usize>,
    /// Use 10000 runs per cell unless --runs is given
    #[arg(long)]
    paper_parity: bool,
    /// Output directory, created if missing
    #[arg(long)]
    out: Option<PathBuf>,
}

fn settings(command: Command, flags: Flags) -> Result<Settings, ConfigError> {
    let cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: flags.seed,
        runs: flags.runs,
        jobs: flags.jobs,
        paper_parity: flags.paper_parity,
        out: flags.out,
    };
    let s = Settings::resolve(command, cfg, std::env::var(SEED_ENV).ok(), overrides)?;
    std::fs::create_dir_all(&s.out)
        .map_err(|e| ConfigError(format!("cannot create output directory {}: {e}", s.out.display())))?;
    Ok(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Cmd::Diagnose(f) => (Command::Diagnose, f),
        Cmd::Sweep(f) => (Command::Sweep, f),
        Cmd::DemoScalar(f) => (Command::DemoScalar, f),
        Cmd::App(f) => (Command::App, f),
    };
    let s = match settings(command, flags) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(Status::ConfigError as u8);
        }
    };
    let exec = match s.jobs {
        Some(1) => Execution::Sequential,
        Some(n) => {
            configure_threads(n);
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let result = match command {
        Command::Diagnose => commands::diagnose(&s, exec),
        Command::Sweep => commands::sweep(&s, exec),
        Command::DemoScalar => commands::demo_scalar(&s, exec),
        Command::App => commands::app(&s, exec),
    };
    let status = result.unwrap_or_else(|e| {
        eprintln!("error: {}", e.0);
        Status::RuntimeError
    });
    ExitCode::from(status as u8)
}
