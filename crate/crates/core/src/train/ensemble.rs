use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdversarialConfig, EpochStats, TrainConfig, TrainError, Trainer};
use crate::data::{balance_subset, Corpus, DataError, Segment, SegmentBatch, Split};
use crate::models::{build, Model, ModelSpec};
use crate::seed::{derive, rng_for, stream};

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    pub members: Vec<Model>,
    /// Init seed of each member.
    pub member_seeds: Vec<u64>,
    /// Balanced subset (indices into the training segments) of each member.
    pub subsets: Vec<Vec<usize>>,
    /// Per-epoch records, ordered by member then epoch.
    pub history: Vec<EpochStats>,
}

/// `(init seed, subset seed)` for each member.
pub fn member_seeds(cfg: &TrainConfig) -> Vec<(u64, u64)> {
    (0..cfg.ensemble_size as u64)
        .map(|m| {
            (
                derive(cfg.seed, stream::MEMBER, m),
                derive(cfg.seed, stream::SUBSET, m),
            )
        })
        .collect()
}

/// The subset, shuffled for `epoch` and cut into batches.
pub fn epoch_batches(
    segments: &[Segment],
    subset: &[usize],
    batch_size: usize,
    order_seed: u64,
    epoch: usize,
) -> Vec<SegmentBatch> {
    let mut order = subset.to_vec();
    order.shuffle(&mut rng_for(order_seed, stream::ORDER, epoch as u64));
    order
        .chunks(batch_size)
        .map(|c| SegmentBatch::new(c.iter().map(|&i| segments[i].clone()).collect()))
        .collect()
}

/// Trains `ensemble_size` members, each from its own init seed on its own
/// balanced subset. Members run in parallel; results keep member order.
pub fn train_ensemble(
    segments: &[Segment],
    spec: &ModelSpec,
    adv: &AdversarialConfig,
    cfg: &TrainConfig,
) -> Result<EnsembleModel, TrainError> {
    cfg.validate()?;
    adv.validate()?;
    for class in [0u8, 1] {
        if !segments.iter().any(|s| s.condition == class) {
            return Err(DataError::MissingClass(class).into());
        }
    }
    let seeds = member_seeds(cfg);
    let results: Vec<(Model, Vec<usize>, Vec<EpochStats>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(m, &(init, subset_seed))| {
            let subset = balance_subset(segments, subset_seed)?;
            let model = build(&ModelSpec {
                seed: init,
                ..spec.clone()
            })?;
            let mut trainer = Trainer::new(model, *adv, cfg, m)?;
            let mut history = Vec::with_capacity(cfg.epochs);
            for epoch in 0..cfg.epochs {
                let batches = epoch_batches(segments, &subset, cfg.batch_size, init, epoch);
                let stats = trainer.train_epoch(&batches)?;
                log::info!(
                    "member {m} epoch {epoch}: l_mdd {:.4} l_spk {:.4}",
                    stats.l_mdd,
                    stats.l_spk
                );
                history.push(stats);
            }
            Ok((trainer.into_model(), subset, history))
        })
        .collect::<Result<_, TrainError>>()?;

    let mut out = EnsembleModel {
        members: Vec::new(),
        member_seeds: seeds.iter().map(|s| s.0).collect(),
        subsets: Vec::new(),
        history: Vec::new(),
    };
    for (model, subset, history) in results {
        out.members.push(model);
        out.subsets.push(subset);
        out.history.extend(history);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPrediction {
    pub speaker: String,
    /// Mean segment probability over all segments and members.
    pub probability: f64,
    /// `probability >= 0.5`.
    pub label: u8,
    pub condition: u8,
    pub segments: usize,
}

/// Mean of `p`, summed in sorted order so the result does not depend on the
/// order of the inputs.
pub fn mean_probability(p: &mut [f64]) -> f64 {
    p.sort_by(f64::total_cmp);
    p.iter().sum::<f64>() / p.len() as f64
}

/// Speaker-level decisions for every speaker with eval audio in `corpus`.
pub fn predict_speaker_level(
    members: &[Model],
    corpus: &Corpus,
    eval: &[Segment],
) -> Result<Vec<SpeakerPrediction>, TrainError> {
    let per_member: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            eval.par_iter()
                .map(|s| {
                    let z = m.forward(&s.samples)?.mdd_logit.data()[0] as f64;
                    Ok(crate::autodiff::sigmoid(z))
                })
                .collect::<Result<_, TrainError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut probs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (r, _) in corpus.split(Split::Eval) {
        let id = corpus
            .speaker_index(&corpus.records()[r].speaker_id)
            .expect("speaker table covers every record");
        probs.entry(id).or_default();
    }
    for (i, s) in eval.iter().enumerate() {
        let entry = probs.entry(s.speaker).or_default();
        entry.extend(per_member.iter().map(|p| p[i]));
    }

    probs
        .into_iter()
        .map(|(id, mut p)| {
            let name = corpus.speakers()[id].clone();
            if p.is_empty() {
                return Err(TrainError::EmptySpeaker(name));
            }
            let probability = mean_probability(&mut p);
            Ok(SpeakerPrediction {
                speaker: name,
                probability,
                label: u8::from(probability >= 0.5),
                condition: corpus.speaker_condition(id),
                segments: p.len() / members.len().max(1),
            })
        })
        .collect()
}
