//! Full run checkpoints: model weights plus what is needed to evaluate or
//! resume a run (frontend config, normalization, split, optimizer state).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{FrontendConfig, NormalizationParams};
use crate::model::{read_container, write_container, AfpModel, ModelConfig};
use crate::train::{Adam, TrainingConfig, TrainingLog, TrainingMode};
use crate::{Error, Result};

/// Data-side state a trained model depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataContext {
    pub frontend: FrontendConfig,
    pub normalization: NormalizationParams,
    /// Sorted category names; index = class id.
    pub categories: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct TrainerState {
    pub config: TrainingConfig,
    pub mode: TrainingMode,
    pub epochs_done: usize,
    pub steps: u64,
    pub adam_t: u64,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AfpModel,
    pub data: Option<DataContext>,
    pub(crate) trainer: Option<(TrainerState, Adam)>,
}

impl Checkpoint {
    pub fn new(model: AfpModel, data: Option<DataContext>) -> Self {
        Self {
            model,
            data,
            trainer: None,
        }
    }

    /// Training mode and log when the checkpoint came from a trainer.
    pub fn training(&self) -> Option<(TrainingMode, &TrainingLog)> {
        self.trainer.as_ref().map(|(s, _)| (s.mode, &s.log))
    }

    /// Seed of the training run (also the model initialization seed).
    pub fn training_seed(&self) -> Option<u64> {
        self.trainer.as_ref().map(|(s, _)| s.config.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Self::save_parts(
            path,
            &self.model,
            self.data.as_ref(),
            self.trainer.as_ref().map(|(s, a)| (s, a)),
        )
    }

    pub(crate) fn save_parts(
        path: impl AsRef<Path>,
        model: &AfpModel,
        data: Option<&DataContext>,
        trainer: Option<(&TrainerState, &Adam)>,
    ) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "pairfeat-checkpoint",
            "model": model.config(),
            "model_tensors": model.state_len(),
            "data": data,
            "trainer": trainer.map(|(s, _)| s),
        });
        let mut tensors = model.state_tensors();
        if let Some((_, adam)) = trainer {
            tensors.extend(adam.m.iter().map(Vec::as_slice));
            tensors.extend(adam.v.iter().map(Vec::as_slice));
        }
        write_container(path, &meta, &tensors)
    }

    /// Reads a checkpoint or a bare weights file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, tensors) = read_container(path)?;
        let bad = |what: &str, e: serde_json::Error| Error::Checkpoint(format!("{what}: {e}"));
        let config: ModelConfig =
            serde_json::from_value(meta["model"].clone()).map_err(|e| bad("model config", e))?;
        let mut model = AfpModel::new(config, 0)?;
        let n = model.state_len();
        if tensors.len() < n {
            return Err(Error::Checkpoint(format!(
                "expected at least {n} tensors, found {}",
                tensors.len()
            )));
        }
        model.restore_state(&tensors[..n])?;

        let data: Option<DataContext> = match meta.get("data") {
            Some(v) if !v.is_null() => Some(serde_json::from_value(v.clone()).map_err(|e| bad("data", e))?),
            _ => None,
        };
        let trainer = match meta.get("trainer") {
            Some(v) if !v.is_null() => {
                let state: TrainerState =
                    serde_json::from_value(v.clone()).map_err(|e| bad("trainer", e))?;
                let mut adam = Adam::new(&state.config, &model.params());
                let k = adam.m.len();
                if tensors.len() != n + 2 * k {
                    return Err(Error::Checkpoint("optimizer state is incomplete".into()));
                }
                for (slot, t) in adam.m.iter_mut().chain(adam.v.iter_mut()).zip(&tensors[n..]) {
                    if slot.len() != t.len() {
                        return Err(Error::Checkpoint("optimizer tensor size mismatch".into()));
                    }
                    slot.copy_from_slice(t);
                }
                adam.t = state.adam_t;
                Some((state, adam))
            }
            _ => {
                if tensors.len() != n {
                    return Err(Error::Checkpoint("unexpected extra tensors".into()));
                }
                None
            }
        };
        Ok(Self {
            model,
            data,
            trainer,
        })
    }
}
