//! The two raw-waveform architectures, with every trainable parameter tagged
//! as feature extraction (FE) or feature processing (FP).

mod builder;
pub mod checkpoint;
mod depaudionet;
mod ecapa;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// Trunk channel width at multiplier 1.0.
pub const BASE_CHANNELS: usize = 128;
pub const INPUT_KERNEL: usize = 1024;
pub const INPUT_STRIDE: usize = 512;
pub const DEFAULT_SEGMENT_LEN: usize = 61440;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("segment has {actual} samples, model expects {expected}")]
    WrongSegmentLength { expected: usize, actual: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    EcapaLite,
    #[serde(rename = "depaudionet_lite")]
    DepAudioNetLite,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::EcapaLite => "ecapa_lite",
            Architecture::DepAudioNetLite => "depaudionet_lite",
        })
    }
}

/// Layer group that receives its own adversarial weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "FE")]
    FeatureExtraction,
    #[serde(rename = "FP")]
    FeatureProcessing,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::FeatureExtraction => "FE",
            Component::FeatureProcessing => "FP",
        })
    }
}

fn default_multiplier() -> f64 {
    1.0
}
fn default_embedding_dim() -> usize {
    128
}
fn default_num_speakers() -> usize {
    107
}
fn default_segment_len() -> usize {
    DEFAULT_SEGMENT_LEN
}
fn default_res2_scale() -> usize {
    4
}
fn default_se_ratio() -> usize {
    8
}
fn default_attention_channels() -> usize {
    BASE_CHANNELS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    #[serde(default = "default_multiplier")]
    pub channel_multiplier: f64,
    /// Embedding width (ECAPA) or LSTM hidden size (DepAudioNet).
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_num_speakers")]
    pub num_speakers: usize,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_res2_scale")]
    pub res2_scale: usize,
    #[serde(default = "default_se_ratio")]
    pub se_ratio: usize,
    /// Attention bottleneck width at multiplier 1.0.
    #[serde(default = "default_attention_channels")]
    pub attention_channels: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            channel_multiplier: default_multiplier(),
            embedding_dim: default_embedding_dim(),
            num_speakers: default_num_speakers(),
            segment_len: default_segment_len(),
            seed: 0,
            res2_scale: default_res2_scale(),
            se_ratio: default_se_ratio(),
            attention_channels: default_attention_channels(),
        }
    }

    /// Scales a base channel count by the multiplier.
    pub fn scaled(&self, base: usize) -> Result<usize, ModelError> {
        let v = base as f64 * self.channel_multiplier;
        let r = v.round();
        if !(self.channel_multiplier > 0.0) || (v - r).abs() > 1e-9 || r < 1.0 {
            return Err(ModelError::InvalidSpec(format!(
                "channel_multiplier {} gives non-integer width {v} for base {base}",
                self.channel_multiplier
            )));
        }
        Ok(r as usize)
    }

    pub fn channels(&self) -> Result<usize, ModelError> {
        self.scaled(BASE_CHANNELS)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let c = self.channels()?;
        if self.num_speakers < 2 {
            return Err(ModelError::InvalidSpec(format!(
                "num_speakers must be at least 2, got {}",
                self.num_speakers
            )));
        }
        if self.embedding_dim == 0 {
            return Err(ModelError::InvalidSpec(
                "embedding_dim must be positive".into(),
            ));
        }
        if self.segment_len < INPUT_KERNEL {
            return Err(ModelError::InvalidSpec(format!(
                "segment_len {} shorter than the input kernel {INPUT_KERNEL}",
                self.segment_len
            )));
        }
        if self.architecture == Architecture::EcapaLite {
            if self.res2_scale < 2 || c % self.res2_scale != 0 {
                return Err(ModelError::InvalidSpec(format!(
                    "{c} channels not divisible by res2 scale {}",
                    self.res2_scale
                )));
            }
            if self.se_ratio == 0 || c / self.se_ratio == 0 {
                return Err(ModelError::InvalidSpec(format!(
                    "se_ratio {} leaves no bottleneck channels for width {c}",
                    self.se_ratio
                )));
            }
            self.scaled(self.attention_channels)?;
        }
        Ok(())
    }
}

/// How the time axis is laid out in a captured activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationLayout {
    /// `[C, T]`
    ChannelsTime,
    /// `[T, F]`
    TimeFeatures,
    /// `[D]`
    Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Trunk,
    SpeakerHead,
    ConditionHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub component: Component,
    pub role: LayerRole,
    pub layout: ActivationLayout,
}

impl LayerInfo {
    pub fn is_prediction(&self) -> bool {
        self.role != LayerRole::Trunk
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub layer: String,
    pub component: Component,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Net {
    Ecapa(ecapa::EcapaNet),
    DepAudioNet(depaudionet::DepAudioNet),
}

/// A built network: ordered layers, tagged parameter registry and wiring.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerInfo>,
    params: Vec<Parameter>,
    net: Net,
}

/// Tape handles produced by one forward pass.
pub struct TapeForward {
    /// One leaf per registry entry, same order as [`Model::params`].
    pub params: Vec<Var>,
    pub mdd_logit: Var,
    pub spk_logits: Var,
    pub embedding: Var,
    /// `(layer index, output)` in layer order.
    pub activations: Vec<(usize, Var)>,
}

#[derive(Clone, Debug)]
pub struct Activation {
    pub layer: String,
    pub prediction: bool,
    pub layout: ActivationLayout,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub mdd_logit: Tensor<f32>,
    pub spk_logits: Tensor<f32>,
    pub embedding: Tensor<f32>,
    pub activations: Vec<Activation>,
}

impl ForwardOut {
    pub fn activation(&self, layer: &str) -> Option<&Activation> {
        self.activations.iter().find(|a| a.layer == layer)
    }
}

pub fn build(spec: &ModelSpec) -> Result<Model, ModelError> {
    match spec.architecture {
        Architecture::EcapaLite => build_ecapa_lite(spec),
        Architecture::DepAudioNetLite => build_depaudionet_lite(spec),
    }
}

pub fn build_ecapa_lite(spec: &ModelSpec) -> Result<Model, ModelError> {
    if spec.architecture != Architecture::EcapaLite {
        return Err(ModelError::InvalidSpec(format!(
            "build_ecapa_lite called with architecture {}",
            spec.architecture
        )));
    }
    spec.validate()?;
    let (net, layers, params) = ecapa::build(spec)?;
    Ok(Model {
        spec: spec.clone(),
        layers,
        params,
        net: Net::Ecapa(net),
    })
}

pub fn build_depaudionet_lite(spec: &ModelSpec) -> Result<Model, ModelError> {
    if spec.architecture != Architecture::DepAudioNetLite {
        return Err(ModelError::InvalidSpec(format!(
            "build_depaudionet_lite called with architecture {}",
            spec.architecture
        )));
    }
    spec.validate()?;
    let (net, layers, params) = depaudionet::build(spec)?;
    Ok(Model {
        spec: spec.clone(),
        layers,
        params,
        net: Net::DepAudioNet(net),
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    /// Parameter count excluding the speaker prediction head.
    pub fn num_parameters_without_speaker_head(&self) -> usize {
        self.params
            .iter()
            .filter(|p| self.layer(&p.layer).map(|l| l.role) != Some(LayerRole::SpeakerHead))
            .map(Parameter::len)
            .sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Parameter name -> component tag.
    pub fn tags(&self) -> BTreeMap<String, Component> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.component))
            .collect()
    }

    pub fn is_speaker_head_param(&self, p: &Parameter) -> bool {
        self.layer(&p.layer).map(|l| l.role) == Some(LayerRole::SpeakerHead)
    }

    /// Names of layers tagged with `component`, in layer order.
    pub fn layer_names(&self, component: Component) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.component == component)
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    /// Records a full forward pass. Parameters become leaves that require
    /// gradients iff `trainable`.
    pub fn forward_on_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        segment: &[f32],
        trainable: bool,
    ) -> Result<TapeForward, ModelError> {
        if segment.len() != self.spec.segment_len {
            return Err(ModelError::WrongSegmentLength {
                expected: self.spec.segment_len,
                actual: segment.len(),
            });
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor::new(
                    p.shape.clone(),
                    p.values.iter().map(|&v| T::from_f64(v as f64)).collect(),
                )
                .expect("registry shapes are validated at build time");
                tape.leaf(t, trainable)
            })
            .collect();
        let input = tape.constant(Tensor::new(
            vec![1, segment.len()],
            segment.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )?);
        let out = match &self.net {
            Net::Ecapa(n) => n.forward(tape, input, &params)?,
            Net::DepAudioNet(n) => n.forward(tape, input, &params)?,
        };
        Ok(TapeForward { params, ..out })
    }

    /// Inference forward pass capturing every layer output.
    pub fn forward(&self, segment: &[f32]) -> Result<ForwardOut, ModelError> {
        let mut tape = Tape::<f32>::new();
        let f = self.forward_on_tape(&mut tape, segment, false)?;
        let activations = f
            .activations
            .iter()
            .map(|&(li, v)| {
                let info = &self.layers[li];
                Activation {
                    layer: info.name.clone(),
                    prediction: info.is_prediction(),
                    layout: info.layout,
                    value: tape.value(v).clone(),
                }
            })
            .collect();
        Ok(ForwardOut {
            mdd_logit: tape.value(f.mdd_logit).clone(),
            spk_logits: tape.value(f.spk_logits).clone(),
            embedding: tape.value(f.embedding).clone(),
            activations,
        })
    }

    /// Overwrites parameter values by name; shapes and tags must match.
    pub fn load_parameters(&mut self, params: &[Parameter]) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                params.len()
            )));
        }
        let by_name: BTreeMap<&str, &Parameter> =
            params.iter().map(|p| (p.name.as_str(), p)).collect();
        for own in &mut self.params {
            let src = by_name
                .get(own.name.as_str())
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {}", own.name)))?;
            if src.shape != own.shape || src.values.len() != own.values.len() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    own.name, src.shape, own.shape
                )));
            }
            if src.component != own.component {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} tagged {}, expected {}",
                    own.name, src.component, own.component
                )));
            }
            own.values.clone_from(&src.values);
        }
        Ok(())
    }
}

/// Partial output of an architecture's forward; `params` is filled by [`Model`].
pub(crate) fn partial_forward(
    mdd_logit: Var,
    spk_logits: Var,
    embedding: Var,
    activations: Vec<(usize, Var)>,
) -> TapeForward {
    TapeForward {
        params: Vec::new(),
        mdd_logit,
        spk_logits,
        embedding,
        activations,
    }
}
