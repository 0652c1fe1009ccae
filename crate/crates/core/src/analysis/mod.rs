//! Separability (GDV), identity probing and detection metrics.

mod f1;
mod gdv;
mod layerwise;
mod probe;

use thiserror::Error;

use crate::models::ModelError;

pub use f1::{f1_report, F1Report};
pub use gdv::gdv;
pub use layerwise::{layerwise_gdv, pool_time, GdvEntry, GdvReport};
pub use probe::{embed, eval_probe, train_probe, EmbeddingSet, ProbeConfig, ProbeModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class of point {index} has a single member")]
    SingletonClass { index: usize },
    #[error("no dimension with non-zero variance")]
    NoDimensions,
    #[error("probe trained on {train} speakers but eval set has {eval} (sets must match)")]
    SpeakerSetMismatch { train: usize, eval: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<csv::Error> for AnalysisError {
    fn from(e: csv::Error) -> Self {
        AnalysisError::Csv(e.to_string())
    }
}
