//! Versioned structured-text parameter checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{NamedParam, ParamSet};
use crate::nn::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub version: u32,
    pub params: Vec<ParamRecord>,
}

impl ParamCheckpoint {
    pub fn from_params(params: &ParamSet) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            params: params
                .entries()
                .iter()
                .map(|e| ParamRecord {
                    name: e.name.clone(),
                    shape: e.value.shape(),
                    data: e.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies values into `target`, which fixes the expected names and shapes.
    pub fn restore_into(&self, target: &mut ParamSet) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.params.len() != target.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                target.len()
            )));
        }
        for (rec, NamedParam { name, value }) in self.params.iter().zip(target.entries()) {
            if rec.name != *name {
                return Err(Error::Checkpoint(format!(
                    "layer order mismatch: found {}, expected {name}",
                    rec.name
                )));
            }
            if rec.shape != value.shape() || rec.data.len() != rec.shape[0] * rec.shape[1] {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch in layer {name}: checkpoint {:?}, model {:?}",
                    rec.shape,
                    value.shape()
                )));
            }
        }
        for (rec, entry) in self.params.iter().zip(target.entries_mut()) {
            entry.value = Tensor::new(rec.shape[0], rec.shape[1], rec.data.clone());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
