//! Command-line front end and reward-grading HTTP service.

pub mod commands;
pub mod config;
pub mod grading;
pub mod manifest;
pub mod service;

use std::ffi::OsString;
use std::fmt;

use clap::{Parser, Subcommand};
use gdv_core::backends::BackendError;
use gdv_core::cases::CaseError;

pub use commands::{EvalArgs, GradeArgs, ServeArgs, SimulateArgs, TrainArgs};

/// Invalid flags, config values or config files.
pub const EXIT_USAGE: i32 = 2;
/// Corpus, split or trajectory data that cannot be used.
pub const EXIT_DATA: i32 = 3;
/// Sub-agent backend failure.
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError { code: EXIT_BACKEND, message: message.into() }
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        CliError { code: 1, message: format!("{context}: {err}") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        match e {
            CaseError::InvalidConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::backend(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gdv", version, about = "Gene-disease validity curation workbench")]
pub struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its panel split file.
    Simulate(SimulateArgs),
    /// Train the parametric supervisor with GRPO.
    Train(TrainArgs),
    /// Run episodes on a split and report metrics.
    Eval(EvalArgs),
    /// Grade logged trajectories offline.
    Grade(GradeArgs),
    /// Serve the reward engine over HTTP.
    Serve(ServeArgs),
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_max_level(level)
        .try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Grade(a) => commands::grade(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
