use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adversarial::{assemble_update, speaker_norms, AdversarialConfig};
use super::optim::Optimizer;
use super::{GradMap, TrainConfig, TrainError};
use crate::autodiff::Tape;
use crate::data::{Segment, SegmentBatch};
use crate::models::{Component, Model};

/// Batch-mean gradients of both losses and the mean losses.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGrads {
    pub mdd: GradMap,
    pub spk: GradMap,
    pub l_mdd: f64,
    pub l_spk: f64,
}

struct Flat {
    mdd: Vec<Vec<f32>>,
    spk: Vec<Vec<f32>>,
    l_mdd: f64,
    l_spk: f64,
}

fn segment_grads(model: &Model, seg: &Segment) -> Result<Flat, TrainError> {
    let num_speakers = model.spec().num_speakers;
    if seg.speaker >= num_speakers {
        return Err(TrainError::SpeakerOutOfRange {
            speaker: seg.speaker,
            num_speakers,
        });
    }
    let mut tape = Tape::<f32>::new();
    let f = model.forward_on_tape(&mut tape, &seg.samples, true)?;
    let collect = |tape: &Tape<f32>| -> Vec<Vec<f32>> {
        f.params
            .iter()
            .zip(model.params())
            .map(|(&v, p)| {
                tape.grad(v)
                    .map_or_else(|| vec![0.0; p.len()], |g| g.to_vec())
            })
            .collect()
    };

    let l_mdd = tape.bce_with_logit(f.mdd_logit, seg.condition as f64)?;
    tape.backward(l_mdd)?;
    let mdd = collect(&tape);
    tape.reset_grads();
    let l_spk = tape.cross_entropy(f.spk_logits, seg.speaker)?;
    tape.backward(l_spk)?;
    let spk = collect(&tape);
    Ok(Flat {
        mdd,
        spk,
        l_mdd: tape.value(l_mdd).data()[0] as f64,
        l_spk: tape.value(l_spk).data()[0] as f64,
    })
}

/// Mean gradients over `segments`. Segments run in parallel; the reduction
/// follows segment order, so the result does not depend on scheduling.
pub fn batch_gradients(model: &Model, segments: &[Segment]) -> Result<BatchGrads, TrainError> {
    if segments.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let per: Vec<Flat> = segments
        .par_iter()
        .map(|s| segment_grads(model, s))
        .collect::<Result<_, _>>()?;
    let n = segments.len() as f32;
    let reduce = |pick: fn(&Flat) -> &Vec<Vec<f32>>| -> GradMap {
        model
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut acc = vec![0.0f32; p.len()];
                for f in &per {
                    for (a, &g) in acc.iter_mut().zip(&pick(f)[i]) {
                        *a += g;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n);
                (p.name.clone(), acc)
            })
            .collect()
    };
    Ok(BatchGrads {
        mdd: reduce(|f| &f.mdd),
        spk: reduce(|f| &f.spk),
        l_mdd: per.iter().map(|f| f.l_mdd).sum::<f64>() / n as f64,
        l_spk: per.iter().map(|f| f.l_spk).sum::<f64>() / n as f64,
    })
}

/// One JSON-lines record of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub member: usize,
    pub epoch: usize,
    pub l_mdd: f64,
    pub l_spk: f64,
    /// Mean over steps of `‖λ₁·∂L_SPK‖` on FE parameters.
    pub grad_norm_fe: f64,
    /// Mean over steps of the speaker contribution on FP parameters.
    pub grad_norm_fp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub l_mdd: f64,
    pub l_spk: f64,
    pub grad_norm_fe: f64,
    pub grad_norm_fp: f64,
}

/// One model, its optimizer state and the adversarial weighting.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    optimizer: Optimizer,
    adv: AdversarialConfig,
    tags: BTreeMap<String, Component>,
    speaker_head: BTreeSet<String>,
    member: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(
        model: Model,
        adv: AdversarialConfig,
        cfg: &TrainConfig,
        member: usize,
    ) -> Result<Self, TrainError> {
        adv.validate()?;
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params());
        let tags = model.tags();
        let speaker_head = model
            .params()
            .iter()
            .filter(|p| model.is_speaker_head_param(p))
            .map(|p| p.name.clone())
            .collect();
        Ok(Self {
            model,
            optimizer,
            adv,
            tags,
            speaker_head,
            member,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn adversarial(&self) -> &AdversarialConfig {
        &self.adv
    }

    pub fn speaker_head(&self) -> &BTreeSet<String> {
        &self.speaker_head
    }

    /// The assembled update direction for a batch, without applying it.
    pub fn update_direction(
        &self,
        batch: &SegmentBatch,
    ) -> Result<(GradMap, BatchGrads), TrainError> {
        let grads = batch_gradients(&self.model, &batch.segments)?;
        let g = assemble_update(
            &grads.mdd,
            &grads.spk,
            &self.tags,
            &self.speaker_head,
            &self.adv,
        )?;
        Ok((g, grads))
    }

    pub fn step(&mut self, batch: &SegmentBatch) -> Result<StepStats, TrainError> {
        let (g, grads) = self.update_direction(batch)?;
        if !grads.l_mdd.is_finite()
            || !grads.l_spk.is_finite()
            || g.values().any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(self.diagnose(batch, &g));
        }
        let (fe, fp) = speaker_norms(&grads.spk, &self.tags, &self.speaker_head, &self.adv);
        self.optimizer.step(self.model.params_mut(), &g)?;
        Ok(StepStats {
            l_mdd: grads.l_mdd,
            l_spk: grads.l_spk,
            grad_norm_fe: fe,
            grad_norm_fp: fp,
        })
    }

    pub fn train_epoch(&mut self, batches: &[SegmentBatch]) -> Result<EpochStats, TrainError> {
        if batches.iter().all(|b| b.is_empty()) {
            return Err(TrainError::EmptyBatch);
        }
        let (mut l_mdd, mut l_spk, mut fe, mut fp) = (0.0, 0.0, 0.0, 0.0);
        let mut seen = 0usize;
        let mut steps = 0usize;
        for b in batches.iter().filter(|b| !b.is_empty()) {
            let s = self.step(b)?;
            l_mdd += s.l_mdd * b.len() as f64;
            l_spk += s.l_spk * b.len() as f64;
            fe += s.grad_norm_fe;
            fp += s.grad_norm_fp;
            seen += b.len();
            steps += 1;
        }
        let stats = EpochStats {
            member: self.member,
            epoch: self.epoch,
            l_mdd: l_mdd / seen as f64,
            l_spk: l_spk / seen as f64,
            grad_norm_fe: fe / steps as f64,
            grad_norm_fp: fp / steps as f64,
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Names the first layer with a non-finite activation on the batch, or
    /// failing that the first parameter with a non-finite update.
    fn diagnose(&self, batch: &SegmentBatch, g: &GradMap) -> TrainError {
        let nan = |layer: String, detail: String| TrainError::NonFinite {
            member: self.member,
            epoch: self.epoch,
            layer,
            detail,
        };
        for s in &batch.segments {
            if let Ok(out) = self.model.forward(&s.samples) {
                if let Some(a) = out.activations.iter().find(|a| !a.value.all_finite()) {
                    return nan(
                        a.layer.clone(),
                        format!(
                            "activation on utterance {} offset {}",
                            s.utterance, s.offset
                        ),
                    );
                }
            }
        }
        for p in self.model.params() {
            if p.values.iter().any(|v| !v.is_finite()) {
                return nan(p.layer.clone(), format!("parameter {}", p.name));
            }
        }
        for p in self.model.params() {
            if g[&p.name].iter().any(|v| !v.is_finite()) {
                return nan(p.layer.clone(), format!("gradient of {}", p.name));
            }
        }
        nan(
            "loss".into(),
            "non-finite loss with finite activations".into(),
        )
    }
}
