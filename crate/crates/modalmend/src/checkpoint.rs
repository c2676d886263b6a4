//! JSON checkpoints: the resolved run configuration, the dataset shape and
//! every parameter tensor. `f64` values round-trip exactly.

use std::path::Path;

use modalmend_core::tensor::ParamStore;
use modalmend_core::{ModalityKind, Model, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Failure;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub kinds: Vec<ModalityKind>,
    pub n_labels: usize,
    /// Epoch whose parameters were kept, if a validation split existed.
    pub best_epoch: Option<usize>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, model: &Model, best_epoch: Option<usize>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            kinds: model.kinds.clone(),
            n_labels: model.n_labels,
            best_epoch,
            params: model.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Failure::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("checkpoint {}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Failure::Config(format!(
                "checkpoint {} has version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                ck.version
            )));
        }
        for (_, name, t) in ck.params.iter() {
            Tensor::new(t.shape().to_vec(), t.data().to_vec())
                .map_err(|e| Failure::Config(format!("checkpoint {}: parameter {name}: {e}", path.display())))?;
        }
        Ok(ck)
    }

    /// Rebuilds the model with the checkpoint's own architecture.
    pub fn model(&self) -> Result<Model, Failure> {
        Model::from_params(&self.kinds, self.n_labels, &self.config.model, &self.params)
            .map_err(|e| Failure::Config(format!("checkpoint parameters do not fit its configuration: {e}")))
    }
}
