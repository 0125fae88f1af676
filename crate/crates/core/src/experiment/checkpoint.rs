use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, ExperimentError};
use crate::data::SamplerState;
use crate::rng::RngState;

const FORMAT: u32 = 1;

/// Full state of a cell between two iterations. Parameters are widened to f64,
/// which is exact for both supported precisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Checkpoint {
    pub format: u32,
    pub config_hash: [u8; 32],
    pub cell_key: String,
    pub precision: String,
    pub iteration: u64,
    pub theta: Vec<f64>,
    pub langevin: RngState,
    pub teacher_sampler: SamplerState,
    pub omega: Vec<f64>,
    pub adam_first: Vec<f64>,
    pub adam_second: Vec<f64>,
    pub adam_steps: u64,
    pub student_iteration: u64,
    pub perturb: RngState,
    pub dropout: RngState,
    pub student_sampler: SamplerState,
    pub prob_sum: Vec<f64>,
    pub retained: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let bytes = bincode::serialize(self).map_err(|e| io_err(path, e))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }

    /// Loads and checks that the checkpoint belongs to this config, cell and precision.
    pub fn load(path: &Path, config_hash: &[u8; 32], cell_key: &str, precision: &str) -> Result<Self, ExperimentError> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let ck: Checkpoint =
            bincode::deserialize(&bytes).map_err(|e| io_err(path, format!("corrupt checkpoint: {e}")))?;
        if ck.format != FORMAT {
            return Err(io_err(path, format!("checkpoint format {} is not supported", ck.format)));
        }
        if &ck.config_hash != config_hash {
            return Err(ExperimentError::ConfigMismatch(format!(
                "{} was written under a different config; refusing to resume",
                path.display()
            )));
        }
        if ck.cell_key != cell_key || ck.precision != precision {
            return Err(io_err(path, format!("checkpoint is for cell {} ({})", ck.cell_key, ck.precision)));
        }
        Ok(ck)
    }

    pub fn format() -> u32 {
        FORMAT
    }
}
