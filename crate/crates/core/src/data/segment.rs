use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Corpus, DataError, Split};
use crate::seed::{rng_for, stream};

pub const NORM_EPS: f64 = 1e-8;

/// A fixed-length normalized window of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub samples: Arc<[f32]>,
    pub condition: u8,
    /// Index into the corpus speaker table.
    pub speaker: usize,
    /// Index into the corpus record list.
    pub utterance: usize,
    /// Start sample within the source utterance.
    pub offset: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SegmentBatch {
    pub segments: Vec<Segment>,
}

impl SegmentBatch {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn conditions(&self) -> Vec<u8> {
        self.segments.iter().map(|s| s.condition).collect()
    }

    pub fn speakers(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.speaker).collect()
    }
}

/// Zero mean, unit variance; the variance is floored at [`NORM_EPS`] so a
/// constant input maps to zeros.
pub fn normalize(segment: &[f32]) -> Vec<f32> {
    if segment.is_empty() {
        return Vec::new();
    }
    let n = segment.len() as f64;
    let mean = segment.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = segment
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.max(NORM_EPS).sqrt();
    segment
        .iter()
        .map(|&v| ((v as f64 - mean) / std) as f32)
        .collect()
}

fn to_segment(
    pcm: &[i16],
    start: usize,
    len: usize,
    condition: u8,
    speaker: usize,
    utterance: usize,
) -> Segment {
    let raw: Vec<f32> = pcm[start..start + len]
        .iter()
        .map(|&s| s as f32 / 32768.0)
        .collect();
    Segment {
        samples: normalize(&raw).into(),
        condition,
        speaker,
        utterance,
        offset: start,
    }
}

/// Crops every training utterance to the shortest one at a seeded uniform
/// offset, then cuts consecutive non-overlapping segments. The remainder of
/// each crop is discarded.
pub fn crop_and_segment(
    corpus: &Corpus,
    seed: u64,
    segment_len: usize,
) -> Result<Vec<Segment>, DataError> {
    let train: Vec<_> = corpus.split(Split::Train).collect();
    if train.is_empty() {
        return Err(DataError::NoTrainingData);
    }
    let offenders: Vec<String> = train
        .iter()
        .filter(|(_, r)| r.num_samples < segment_len)
        .map(|(_, r)| r.label())
        .collect();
    if !offenders.is_empty() {
        return Err(DataError::TooShort {
            required: segment_len,
            offenders,
        });
    }
    let crop = train.iter().map(|(_, r)| r.num_samples).min().unwrap_or(0);
    let per_utterance = crop / segment_len;

    let parts: Vec<Vec<Segment>> = train
        .par_iter()
        .map(|&(u, r)| {
            let pcm = r.samples()?;
            let mut rng = rng_for(seed, stream::CROP, u as u64);
            let start = rng.random_range(0..=pcm.len() - crop);
            let speaker = corpus
                .speaker_index(&r.speaker_id)
                .expect("speaker table covers every record");
            Ok((0..per_utterance)
                .map(|k| {
                    to_segment(
                        &pcm,
                        start + k * segment_len,
                        segment_len,
                        r.condition,
                        speaker,
                        u,
                    )
                })
                .collect())
        })
        .collect::<Result<_, DataError>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Segments every eval utterance from its first sample, without cropping or
/// balancing. Utterances shorter than one segment contribute nothing.
pub fn segment_eval(corpus: &Corpus, segment_len: usize) -> Result<Vec<Segment>, DataError> {
    let eval: Vec<_> = corpus.split(Split::Eval).collect();
    let parts: Vec<Vec<Segment>> = eval
        .par_iter()
        .map(|&(u, r)| {
            let pcm = r.samples()?;
            let speaker = corpus
                .speaker_index(&r.speaker_id)
                .expect("speaker table covers every record");
            Ok((0..pcm.len() / segment_len)
                .map(|k| to_segment(&pcm, k * segment_len, segment_len, r.condition, speaker, u))
                .collect())
        })
        .collect::<Result<_, DataError>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Samples `min(n_pos, n_neg)` segments of each class without replacement.
/// Returns sorted indices into `segments`.
pub fn balance_subset(segments: &[Segment], seed: u64) -> Result<Vec<usize>, DataError> {
    let pos: Vec<usize> = (0..segments.len())
        .filter(|&i| segments[i].condition == 1)
        .collect();
    let neg: Vec<usize> = (0..segments.len())
        .filter(|&i| segments[i].condition == 0)
        .collect();
    if pos.is_empty() {
        return Err(DataError::MissingClass(1));
    }
    if neg.is_empty() {
        return Err(DataError::MissingClass(0));
    }
    let n = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = sample(&mut rng, pos.len(), n)
        .into_iter()
        .map(|i| pos[i])
        .chain(sample(&mut rng, neg.len(), n).into_iter().map(|i| neg[i]))
        .collect();
    out.sort_unstable();
    Ok(out)
}
