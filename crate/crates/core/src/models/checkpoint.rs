//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "disentangle-lab/checkpoint",
//!   "version": 1,
//!   "label": "nusd",
//!   "spec": { "architecture": "ecapa_lite", ... },
//!   "tags": { "input_layer.weight": "FE", ... },
//!   "members": [ { "seed": 42, "params": [ { "name": "...", "shape": [..], "values": [..] } ] } ]
//! }
//! ```
//!
//! `spec.seed` is ignored on load; each member is rebuilt from its own seed
//! and then overwritten by name. `f32` values round-trip exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, Component, Model, ModelError, ModelSpec, Parameter};

pub const FORMAT: &str = "disentangle-lab/checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberWeights {
    pub seed: u64,
    pub params: Vec<NamedArray>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Free-form run tag, e.g. `baseline`, `usd`, `nusd`.
    pub label: String,
    pub spec: ModelSpec,
    pub tags: BTreeMap<String, Component>,
    pub members: Vec<MemberWeights>,
}

impl Checkpoint {
    pub fn from_models(label: &str, models: &[Model]) -> Result<Self, ModelError> {
        let first = models
            .first()
            .ok_or_else(|| ModelError::Checkpoint("no models to save".into()))?;
        let members = models
            .iter()
            .map(|m| MemberWeights {
                seed: m.spec().seed,
                params: m
                    .params()
                    .iter()
                    .map(|p| NamedArray {
                        name: p.name.clone(),
                        shape: p.shape.clone(),
                        values: p.values.clone(),
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            label: label.into(),
            spec: first.spec().clone(),
            tags: first.tags(),
            members,
        })
    }

    pub fn into_models(&self) -> Result<Vec<Model>, ModelError> {
        if self.format != FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        self.members
            .iter()
            .map(|m| {
                let spec = ModelSpec {
                    seed: m.seed,
                    ..self.spec.clone()
                };
                let mut model = build(&spec)?;
                if model.tags() != self.tags {
                    return Err(ModelError::Checkpoint(
                        "tag map does not match the architecture".into(),
                    ));
                }
                let params: Vec<Parameter> = m
                    .params
                    .iter()
                    .map(|a| Parameter {
                        name: a.name.clone(),
                        layer: String::new(),
                        component: self
                            .tags
                            .get(&a.name)
                            .copied()
                            .unwrap_or(Component::FeatureProcessing),
                        shape: a.shape.clone(),
                        values: a.values.clone(),
                    })
                    .collect();
                model.load_parameters(&params)?;
                Ok(model)
            })
            .collect()
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut w, checkpoint).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}
