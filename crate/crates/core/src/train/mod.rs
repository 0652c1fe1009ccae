//! Adversarial update assembly, optimizers, the per-model training loop and
//! ensembles over balanced subsets.

mod adversarial;
mod ensemble;
mod optim;
mod trainer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::models::ModelError;

pub use adversarial::{assemble_update, speaker_norms, AdversarialConfig, HeadMode};
pub use ensemble::{
    epoch_batches, mean_probability, member_seeds, predict_speaker_level, train_ensemble,
    EnsembleModel, SpeakerPrediction,
};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{batch_gradients, BatchGrads, EpochStats, StepStats, Trainer};

/// Parameter name -> flat gradient.
pub type GradMap = BTreeMap<String, Vec<f32>>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gradient maps disagree on keys: {0}")]
    KeyMismatch(String),
    #[error("beta is undefined when lambda2 = 0")]
    BetaUndefined,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite values in member {member}, epoch {epoch}, layer {layer}: {detail}")]
    NonFinite {
        member: usize,
        epoch: usize,
        layer: String,
        detail: String,
    },
    #[error("speaker id {speaker} outside the {num_speakers} model classes")]
    SpeakerOutOfRange { speaker: usize, num_speakers: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("speaker {0} has no eval segments")]
    EmptySpeaker(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    16
}
fn default_ensemble_size() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            optimizer: OptimizerKind::default(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            ensemble_size: default_ensemble_size(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("ensemble_size", self.ensemble_size),
        ] {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        Ok(())
    }
}
