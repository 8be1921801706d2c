//! `shm-voi` — configuration-driven pipeline runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical/analysis
//! failure.

mod config;
mod manifest;
mod stages;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{validate_config, Scale, StudyConfig};
use stages::StageContext;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] shm_voi_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(shm_voi_core::Error::Config(_)) => 2,
            CliError::Core(shm_voi_core::Error::Domain(_)) => 2,
            _ => 3,
        }
    }
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    /// Build the FE damage-grid surrogate (modal + capacity).
    BuildSurrogate,
    /// Generate the planted-truth monitoring history.
    SimulateData,
    /// Sequential Bayesian updating along the planted-truth history.
    Update,
    /// Prior reliability curve and the monitoring-updated sequence.
    Reliability,
    /// Life-cycle cost optimization on prior information.
    LccPrior,
    /// Life-cycle cost optimization with monitoring (preposterior).
    LccPreposterior,
    /// Value of information per cost ratio.
    Voi,
    /// Value of partial perfect information per cost ratio.
    Vppi,
    /// VoI comparison across sensor counts.
    SensorStudy,
}

impl Stage {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Stage::BuildSurrogate => "build-surrogate",
            Stage::SimulateData => "simulate-data",
            Stage::Update => "update",
            Stage::Reliability => "reliability",
            Stage::LccPrior => "lcc-prior",
            Stage::LccPreposterior => "lcc-preposterior",
            Stage::Voi => "voi",
            Stage::Vppi => "vppi",
            Stage::SensorStudy => "sensor-study",
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "shm-voi",
    about = "Value-of-information analysis for vibration-monitored bridge maintenance",
    version
)]
struct Cli {
    /// Stage to run.
    #[arg(value_enum)]
    stage: Stage,
    /// Study configuration (TOML). Missing file or flag: full defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Sample-count preset.
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Write plot-ready CSVs alongside the result tables.
    #[arg(long)]
    emit_plots: bool,
}

fn load_config(cli: &Cli) -> Result<StudyConfig, CliError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read {}: {e}", path.display()))
        })?,
        None => String::new(),
    };
    validate_config(&text, cli.seed, cli.scale)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Other(format!("worker pool: {e}")))?;
    }
    let ctx = StageContext::new(config, cli.emit_plots);
    stages::run_stage(cli.stage, &ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
