use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GradMap, TrainError};
use crate::models::Component;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// The speaker head sits in FP and ascends the speaker loss with weight λ₂.
    #[default]
    ReversedHead,
    /// The speaker head descends the speaker loss, unscaled; the trunk ascends.
    CooperativeHead,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    /// FE weight λ₁.
    pub lambda1: f64,
    /// FP weight λ₂.
    pub lambda2: f64,
    #[serde(default)]
    pub head_mode: HeadMode,
}

impl AdversarialConfig {
    pub fn baseline() -> Self {
        Self::nusd(0.0, 0.0)
    }

    pub fn usd(lambda: f64) -> Self {
        Self::nusd(lambda, lambda)
    }

    pub fn nusd(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            head_mode: HeadMode::ReversedHead,
        }
    }

    /// `λ₁ = β·λ₂`.
    pub fn from_beta(beta: f64, lambda2: f64) -> Self {
        Self::nusd(beta * lambda2, lambda2)
    }

    pub fn with_head_mode(self, head_mode: HeadMode) -> Self {
        Self { head_mode, ..self }
    }

    pub fn beta(&self) -> Result<f64, TrainError> {
        if self.lambda2 > 0.0 {
            Ok(self.lambda1 / self.lambda2)
        } else {
            Err(TrainError::BetaUndefined)
        }
    }

    pub fn is_usd(&self) -> bool {
        self.lambda1 == self.lambda2
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `f` in `g = ∂L_MDD - f·∂L_SPK` for one parameter.
    pub fn speaker_factor(&self, component: Component, speaker_head: bool) -> f64 {
        match (self.head_mode, speaker_head, component) {
            (HeadMode::CooperativeHead, true, _) => -1.0,
            (_, _, Component::FeatureExtraction) => self.lambda1,
            (_, _, Component::FeatureProcessing) => self.lambda2,
        }
    }
}

fn check_keys(
    grads_mdd: &GradMap,
    grads_spk: &GradMap,
    tags: &BTreeMap<String, Component>,
) -> Result<(), TrainError> {
    let a: BTreeSet<&String> = grads_mdd.keys().collect();
    let b: BTreeSet<&String> = grads_spk.keys().collect();
    let c: BTreeSet<&String> = tags.keys().collect();
    if a != b || a != c {
        let stray: Vec<&str> = a
            .symmetric_difference(&b)
            .chain(a.symmetric_difference(&c))
            .map(|s| s.as_str())
            .collect();
        return Err(TrainError::KeyMismatch(stray.join(", ")));
    }
    for (k, m) in grads_mdd {
        if m.len() != grads_spk[k].len() {
            return Err(TrainError::KeyMismatch(format!(
                "{k}: {} vs {} values",
                m.len(),
                grads_spk[k].len()
            )));
        }
    }
    Ok(())
}

/// Per-parameter update direction: FE gets `∂L_MDD - λ₁·∂L_SPK`, FP gets
/// `∂L_MDD - λ₂·∂L_SPK`. In cooperative-head mode the names in
/// `speaker_head` get `∂L_MDD + ∂L_SPK` instead.
pub fn assemble_update(
    grads_mdd: &GradMap,
    grads_spk: &GradMap,
    tags: &BTreeMap<String, Component>,
    speaker_head: &BTreeSet<String>,
    cfg: &AdversarialConfig,
) -> Result<GradMap, TrainError> {
    check_keys(grads_mdd, grads_spk, tags)?;
    Ok(grads_mdd
        .iter()
        .map(|(k, m)| {
            let f = cfg.speaker_factor(tags[k], speaker_head.contains(k)) as f32;
            let g = m
                .iter()
                .zip(&grads_spk[k])
                .map(|(&m, &s)| m - f * s)
                .collect();
            (k.clone(), g)
        })
        .collect())
}

/// L2 norms of the speaker contribution `f·∂L_SPK`, split by component.
pub fn speaker_norms(
    grads_spk: &GradMap,
    tags: &BTreeMap<String, Component>,
    speaker_head: &BTreeSet<String>,
    cfg: &AdversarialConfig,
) -> (f64, f64) {
    let (mut fe, mut fp) = (0.0f64, 0.0f64);
    for (k, s) in grads_spk {
        let Some(&component) = tags.get(k) else {
            continue;
        };
        let f = cfg.speaker_factor(component, speaker_head.contains(k));
        let sq = s.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() * f * f;
        match component {
            Component::FeatureExtraction => fe += sq,
            Component::FeatureProcessing => fp += sq,
        }
    }
    (fe.sqrt(), fp.sqrt())
}
