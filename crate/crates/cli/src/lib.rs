//! The `deanchor` command line: ingest, train, calibrate, simulate,
//! compare-policies and report, plus a client for the session service.

pub mod commands;
pub mod manifest;
pub mod session;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deanchor_client::ClientError;
use deanchor_core::harness::report::Format;
use deanchor_core::pipeline::PipelineError;
use thiserror::Error;

pub const OUT_DIR_ENV: &str = "DEANCHOR_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "deanchor", version, about = "Time allocation against AI anchoring: pipeline and session client")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration document
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the one in the configuration
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Format of reports
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Simulated sessions per group; overrides the configuration
    #[arg(long, global = true, value_name = "N")]
    pub replications: Option<usize>,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Text,
    Csv,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Text => "txt",
            OutputFormat::Csv => "csv",
        }
    }
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Json => Format::Json,
            OutputFormat::Text => Format::Text,
            OutputFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load student records and summarize them
    Ingest {
        /// Read `student-mat.csv` / `student-por.csv` from this directory instead of the configured source
        #[arg(long, value_name = "DIR")]
        uci_dir: Option<PathBuf>,
    },
    /// Train the classifier for the configured experiment and rank features
    Train,
    /// Fit anchoring schedules to the configured agreement curves
    Calibrate,
    /// Simulate participants and write stratified metrics
    Simulate,
    /// Compare allocation policies analytically on the configured reward curves
    ComparePolicies,
    /// Re-render a metrics file and emit plot-ready series
    Report {
        /// Metrics file (.json, .txt or .csv)
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Write synthetic records in the UCI file format
    GenerateData,
    /// Talk to a running session service
    Session(session::SessionArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("service error: {0}")]
    Service(#[from] ClientError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Calibration(_) => 5,
            CliError::Budget(_) => 6,
            CliError::Service(_) => 7,
            CliError::Other(_) => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Config(_) => CliError::Config(msg),
            PipelineError::Data(_) => CliError::Data(msg),
            PipelineError::Calibration(_) => CliError::Calibration(msg),
            PipelineError::Budget(_) => CliError::Budget(msg),
            _ => CliError::Other(msg),
        }
    }
}

/// Runs one subcommand and returns the files it wrote, manifest last.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Session(args) => session::run(&cli.common, args).map(|()| Vec::new()),
        command => commands::run(&cli.common, command),
    }
}
