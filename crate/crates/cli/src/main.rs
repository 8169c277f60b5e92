//! `onarch`: batch front end for the intra-day/overnight ARCH model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
//! (non-convergence, negative variance, unstable model).

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod inputs;
mod output;

use commands::{CalibrateArgs, EvaluateArgs, IngestArgs, ReportArgs, SimulateArgs, ValidateArgs, WaldArgs};
use config::Settings;
use output::Run;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<onarch_core::Error> for Failure {
    fn from(e: onarch_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "onarch", version, about = "Intra-day/overnight ARCH volatility model")]
struct Cli {
    /// Worker threads [default: available cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file of option values; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a return panel from OHLC price files
    Ingest(IngestArgs),
    /// Simulate a return panel from a model
    Simulate(SimulateArgs),
    /// Calibrate one equation by maximum likelihood
    Calibrate(CalibrateArgs),
    /// Stability and positivity checks
    Validate(ValidateArgs),
    /// In-sample/out-of-sample comparison against a daily ARCH
    Evaluate(EvaluateArgs),
    /// Wald test of equal parameters between two fits
    Wald(WaldArgs),
    /// Fit, validity and residual diagnostics in one document
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::Validate(_) => "validate",
            Command::Evaluate(_) => "evaluate",
            Command::Wald(_) => "wald",
            Command::Report(_) => "report",
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    let name = cli.command.name();
    let mut settings = Settings::load(cli.config.as_deref(), name)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = settings.value("threads", cli.threads, cores)?;
    if threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();

    let mut run = Run::new(name, argv, threads);
    let s = &mut settings;
    let outcome = match &cli.command {
        Command::Ingest(a) => commands::ingest(a, s, &mut run),
        Command::Simulate(a) => commands::simulate(a, s, &mut run),
        Command::Calibrate(a) => commands::calibrate(a, s, &mut run),
        Command::Validate(a) => commands::validate(a, s, &mut run),
        Command::Evaluate(a) => commands::evaluate(a, s, &mut run),
        Command::Wald(a) => commands::wald(a, s, &mut run),
        Command::Report(a) => commands::report(a, s, &mut run),
    }?;
    run.config = settings.resolved;
    run.finish()?;
    match outcome {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
