//! Synthetic systems and the benchmark harness.

use std::path::PathBuf;

use crate::probo::RunError;

pub mod config;
pub mod constants;
pub mod harness;
pub mod systems;

pub use config::{BenchmarkConfig, CellSpec};
pub use harness::{run_benchmark, run_trials, BenchReport, RunOptions, TrialOutcome};
pub use systems::{
    BasinSystem, ContaminatedSystem, MultitaskSystem, PhaseStepSystem, StateSystem, SystemSpec, SYSTEM_IDS,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("cell `{cell}` trial {trial}: {source}")]
    Run { cell: String, trial: usize, source: Box<RunError> },
}
