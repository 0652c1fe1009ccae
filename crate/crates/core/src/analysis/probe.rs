//! Identity probe: one-vs-rest linear hinge-loss classifiers trained by
//! seeded stochastic subgradient descent with step `1 / (λ (t + t0))`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::data::Segment;
use crate::models::Model;
use crate::seed::{rng_for, stream};

/// Segment embeddings with their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f32>>,
    pub speakers: Vec<usize>,
    pub conditions: Vec<u8>,
    /// Source model tag, e.g. `baseline` or `nusd`.
    pub tag: String,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.is_empty() {
            return Err(AnalysisError::Empty("embedding set"));
        }
        for (what, n) in [
            ("speaker labels", self.speakers.len()),
            ("condition labels", self.conditions.len()),
        ] {
            if n != self.len() {
                return Err(AnalysisError::LengthMismatch {
                    what,
                    left: self.len(),
                    right: n,
                });
            }
        }
        let d = self.dim();
        if let Some(v) = self.vectors.iter().find(|v| v.len() != d) {
            return Err(AnalysisError::LengthMismatch {
                what: "embedding dimension",
                left: d,
                right: v.len(),
            });
        }
        Ok(())
    }
}

/// Embedding-layer outputs of `model` on `segments`. The speaker head is
/// not used.
pub fn embed(
    model: &Model,
    segments: &[Segment],
    tag: &str,
) -> Result<EmbeddingSet, AnalysisError> {
    let vectors = segments
        .par_iter()
        .map(|s| Ok(model.forward(&s.samples)?.embedding.into_data()))
        .collect::<Result<_, AnalysisError>>()?;
    Ok(EmbeddingSet {
        vectors,
        speakers: segments.iter().map(|s| s.speaker).collect(),
        conditions: segments.iter().map(|s| s.condition).collect(),
        tag: tag.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub epochs: usize,
    /// Offset in the step-size schedule; keeps early steps bounded.
    pub t0: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            epochs: 200,
            t0: 1e4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// Speaker id of each classifier row.
    pub classes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Standardization fitted on the training embeddings.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub trained_on: String,
}

impl ProbeModel {
    fn standardize(&self, v: &[f32]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&x, (m, s))| (x as f64 - m) / s)
            .collect()
    }

    /// Speaker id with the highest score; ties go to the earlier class.
    pub fn predict(&self, v: &[f32]) -> usize {
        let x = self.standardize(v);
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, (w, b)) in self.weights.iter().zip(&self.bias).enumerate() {
            let s = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b;
            if s > best.0 {
                best = (s, k);
            }
        }
        self.classes[best.1]
    }
}

pub fn train_probe(train: &EmbeddingSet, cfg: &ProbeConfig) -> Result<ProbeModel, AnalysisError> {
    train.validate()?;
    let classes: Vec<usize> = train
        .speakers
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(AnalysisError::TooFewClasses(classes.len()));
    }
    let n = train.len() as f64;
    let d = train.dim();
    let mean: Vec<f64> = (0..d)
        .map(|j| train.vectors.iter().map(|v| v[j] as f64).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = train
                .vectors
                .iter()
                .map(|v| (v[j] as f64 - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut model = ProbeModel {
        weights: vec![vec![0.0; d]; classes.len()],
        bias: vec![0.0; classes.len()],
        classes,
        mean,
        scale,
        trained_on: train.tag.clone(),
    };
    let x: Vec<Vec<f64>> = train.vectors.iter().map(|v| model.standardize(v)).collect();
    let target: Vec<usize> = train
        .speakers
        .iter()
        .map(|s| {
            model
                .classes
                .binary_search(s)
                .expect("class list built from labels")
        })
        .collect();

    let lambda = cfg.l2;
    let classes = model.classes.len();
    // Each class is an independent binary problem sharing the sample order.
    let rows: Vec<(Vec<f64>, f64)> = (0..classes)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(cfg.seed, stream::PROBE, 0);
            let mut order: Vec<usize> = (0..x.len()).collect();
            let mut w = vec![0.0f64; d];
            let mut b = 0.0f64;
            let mut t = 0.0f64;
            for _ in 0..cfg.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    let eta = 1.0 / (lambda * (t + cfg.t0));
                    t += 1.0;
                    let y = if target[i] == k { 1.0 } else { -1.0 };
                    let margin = y * (w.iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>() + b);
                    let shrink = 1.0 - eta * lambda;
                    w.iter_mut().for_each(|v| *v *= shrink);
                    if margin < 1.0 {
                        w.iter_mut()
                            .zip(&x[i])
                            .for_each(|(v, xi)| *v += eta * y * xi);
                        b += eta * y;
                    }
                }
            }
            (w, b)
        })
        .collect();
    for (k, (w, b)) in rows.into_iter().enumerate() {
        model.weights[k] = w;
        model.bias[k] = b;
    }
    Ok(model)
}

/// Fraction of eval rows whose speaker is predicted correctly.
pub fn eval_probe(probe: &ProbeModel, eval: &EmbeddingSet) -> Result<f64, AnalysisError> {
    eval.validate()?;
    if eval.dim() != probe.mean.len() {
        return Err(AnalysisError::LengthMismatch {
            what: "probe embedding dimension",
            left: probe.mean.len(),
            right: eval.dim(),
        });
    }
    let eval_set: BTreeSet<usize> = eval.speakers.iter().copied().collect();
    let train_set: BTreeSet<usize> = probe.classes.iter().copied().collect();
    if eval_set != train_set {
        return Err(AnalysisError::SpeakerSetMismatch {
            train: train_set.len(),
            eval: eval_set.len(),
        });
    }
    let correct = eval
        .vectors
        .par_iter()
        .zip(&eval.speakers)
        .filter(|(v, &s)| probe.predict(v) == s)
        .count();
    Ok(correct as f64 / eval.len() as f64)
}
