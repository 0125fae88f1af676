//! Experiment driver: grid cells, checkpointed runs, CSV and SVG output.

mod cell;
mod checkpoint;
pub mod config;
mod grid;
pub mod plot;

pub use cell::{run_cell, run_cell_in, Cell, CellOutcome};
pub use config::{BlobsConfig, DataSource, ExperimentConfig, Precision, Preset};
pub use grid::{cell_entropies, cells, read_records, report, resume, run_grid, GridReport, RunOptions};

use crate::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    ConfigMismatch(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("compute error: {0}")]
    Compute(String),
    #[error("cell {cell} stopped at iteration {iteration}")]
    Interrupted { cell: String, iteration: u64 },
}

impl ExperimentError {
    /// Process exit code: 1 config, 2 data, 3 compute.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::ConfigMismatch(_) => 1,
            ExperimentError::Data(_) | ExperimentError::Io(_) => 2,
            ExperimentError::Compute(_) | ExperimentError::Interrupted { .. } => 3,
        }
    }
}

impl From<DataError> for ExperimentError {
    fn from(e: DataError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io(format!("{}: {e}", path.display()))
}
