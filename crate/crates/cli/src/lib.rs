//! Command-line driver for hologram design, evaluation, robustness sweeps,
//! backprojection and gradient checks.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure, 1 anything else (I/O).

pub mod commands;
pub mod config;
pub mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] toah_core::Error),
}

impl CliError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config(ConfigError {
            path: path.into(),
            message: message.into(),
            line: None,
        })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(toah_core::Error::Io(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "toah", version, about = "Acoustic hologram lens design")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON with comments).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Arithmetic precision. Computation is double precision; `f32` only
    /// affects what is accepted, and is refused where it would matter.
    #[arg(long, global = true, value_enum, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a hologram and write the lens, fields and report.
    Design,
    /// Metrics for stored fields or for a lens in the configured medium.
    Evaluate(EvaluateArgs),
    /// Re-evaluate a lens over material variations or surface perturbations.
    Sweep(SweepArgs),
    /// Angular-spectrum reconstruction of a volume from a complex plane.
    Backproject(BackprojectArgs),
    /// Compare the design gradient with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Field file(s); with two, the first is the PSNR reference.
    #[arg(long = "field", num_args = 1)]
    pub fields: Vec<PathBuf>,
    /// Lens thickness map (CSV, meters) to simulate in the configured medium.
    #[arg(long)]
    pub lens: Option<PathBuf>,
    /// Planes before this index are excluded from the metrics (field mode).
    #[arg(long, default_value_t = 0)]
    pub crop_start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Material,
    Perturbation,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Lens thickness map (CSV, meters), e.g. a design's thickness.csv.
    #[arg(long)]
    pub lens: PathBuf,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Number of perturbation realizations (config default otherwise).
    #[arg(long)]
    pub n: Option<usize>,
    /// Perturbation standard deviation in micrometers.
    #[arg(long)]
    pub sigma_um: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BackprojectArgs {
    /// Complex plane file.
    #[arg(long)]
    pub plane: PathBuf,
    /// Propagation distances in millimeters, comma separated; negative
    /// values propagate toward the source.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub distances_mm: Vec<f64>,
    /// Depth of the homogeneous region below the plane; distances beyond it
    /// are rejected. Defaults to the largest requested distance.
    #[arg(long)]
    pub domain_mm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 32)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Sigmoid sharpness at which the lens chain is checked.
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    /// Largest accepted relative error; above it the exit code is 3.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.global.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
        None => commands::dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
