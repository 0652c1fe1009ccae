//! Synthetic corpus with a controllable speaker cue and condition cue.
//!
//! Each speaker has a glottal pitch and a resonance (band-pass centre, Q and
//! spectral tilt) drawn from the seed and pulled towards the population mean
//! by `1 - speaker_effect`. The condition slows the amplitude modulation and
//! raises the pause rate, both scaled by `condition_effect`. Labels are per
//! speaker, half of the speakers in each class.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AudioSource, Corpus, DataError, Split, UtteranceRecord, SAMPLE_RATE};
use crate::seed::{rng_for, stream};

const CENTRE_RANGE: (f64, f64) = (400.0, 3000.0);
const Q_RANGE: (f64, f64) = (1.5, 6.0);
const TILT_RANGE: (f64, f64) = (0.2, 0.9);
const AM_RATE_HZ: f64 = 4.0;
const PAUSE_BLOCK: usize = 3200;
const BASE_PAUSE: f64 = 0.1;
const GAIN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Utterances per speaker assigned to the eval split (the last ones).
    pub eval_utterances: usize,
    pub f0_range: (f64, f64),
    pub condition_effect: f64,
    pub speaker_effect: f64,
    pub noise_level: f64,
    pub utterance_len_range: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_speakers: 20,
            utterances_per_speaker: 40,
            eval_utterances: 10,
            f0_range: (90.0, 250.0),
            condition_effect: 0.8,
            speaker_effect: 1.0,
            noise_level: 0.02,
            utterance_len_range: (61_440, 81_920),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |field, reason: String| Err(DataError::InvalidConfig { field, reason });
        if self.num_speakers < 2 {
            return err(
                "num_speakers",
                format!("need at least 2, got {}", self.num_speakers),
            );
        }
        if self.utterances_per_speaker == 0 {
            return err("utterances_per_speaker", "must be positive".into());
        }
        if self.eval_utterances >= self.utterances_per_speaker {
            return err(
                "eval_utterances",
                format!(
                    "{} leaves no training utterances out of {}",
                    self.eval_utterances, self.utterances_per_speaker
                ),
            );
        }
        let (lo, hi) = self.f0_range;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(lo > 0.0 && lo <= hi && hi < nyquist / 4.0) {
            return err(
                "f0_range",
                format!("({lo}, {hi}) must satisfy 0 < lo <= hi < {}", nyquist / 4.0),
            );
        }
        for (field, v) in [
            ("condition_effect", self.condition_effect),
            ("speaker_effect", self.speaker_effect),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(field, format!("{v} outside [0, 1]"));
            }
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return err(
                "noise_level",
                format!("{} must be finite and >= 0", self.noise_level),
            );
        }
        let (a, b) = self.utterance_len_range;
        if a == 0 || a > b {
            return err(
                "utterance_len_range",
                format!("({a}, {b}) must satisfy 0 < lo <= hi"),
            );
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Voice {
    f0: f64,
    centre: f64,
    q: f64,
    tilt: f64,
}

fn pull(range: (f64, f64), u: f64, effect: f64) -> f64 {
    let mid = 0.5 * (range.0 + range.1);
    mid + effect * (u - mid)
}

fn voice(cfg: &SynthConfig, speaker: usize) -> Voice {
    let mut rng = rng_for(cfg.seed, stream::DATA, speaker as u64);
    let e = cfg.speaker_effect;
    let mut draw = |r: (f64, f64)| pull(r, rng.random_range(r.0..=r.1), e);
    Voice {
        f0: draw(cfg.f0_range),
        centre: draw(CENTRE_RANGE),
        q: draw(Q_RANGE),
        tilt: draw(TILT_RANGE),
    }
}

/// Direct-form I band-pass biquad (constant peak gain).
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn band_pass(centre: f64, q: f64) -> Self {
        let w = 2.0 * PI * centre / SAMPLE_RATE as f64;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha) / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

fn render(cfg: &SynthConfig, v: Voice, condition: u8, index: u64) -> Vec<i16> {
    let mut rng = rng_for(cfg.seed, stream::UTTERANCE, index);
    let (lo, hi) = cfg.utterance_len_range;
    let c = cfg.condition_effect * condition as f64;

    let f0 = v.f0 * (1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal));
    let rate = AM_RATE_HZ * (1.0 - 0.5 * c) * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal));
    let pause = BASE_PAUSE + 0.3 * c;
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let len = rng.random_range(lo..=hi);
    let level = rng.random_range(0.7..1.0);
    let gates: Vec<bool> = (0..len.div_ceil(PAUSE_BLOCK))
        .map(|_| rng.random::<f64>() >= pause)
        .collect();

    let sr = SAMPLE_RATE as f64;
    let mut filter = Biquad::band_pass(v.centre, v.q);
    let mut lp = 0.0;
    let mut phase = 0.0f64;
    (0..len)
        .map(|t| {
            phase = (phase + f0 / sr).fract();
            let source = 2.0 * phase - 1.0;
            lp = v.tilt * lp + (1.0 - v.tilt) * filter.step(source);
            let am = 0.5 * (1.0 + (2.0 * PI * rate * t as f64 / sr + phase0).sin());
            let gate = if gates[t / PAUSE_BLOCK] { 1.0 } else { 0.0 };
            let noise: f64 = rng.sample(StandardNormal);
            let x = GAIN * level * am * gate * lp + cfg.noise_level * GAIN * noise;
            (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
        })
        .collect()
}

/// Generates the corpus in memory; see [`super::write_corpus`] to persist it.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Corpus, DataError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..cfg.num_speakers).collect();
    order.shuffle(&mut rng_for(cfg.seed, stream::LABELS, 0));
    let mut conditions = vec![0u8; cfg.num_speakers];
    for &s in &order[..cfg.num_speakers / 2] {
        conditions[s] = 1;
    }

    let per = cfg.utterances_per_speaker;
    let records = (0..cfg.num_speakers * per)
        .into_par_iter()
        .map(|i| {
            let (s, j) = (i / per, i % per);
            let pcm = render(cfg, voice(cfg, s), conditions[s], i as u64);
            UtteranceRecord {
                speaker_id: format!("spk{s:03}"),
                condition: conditions[s],
                split: if j < per - cfg.eval_utterances {
                    Split::Train
                } else {
                    Split::Eval
                },
                num_samples: pcm.len(),
                audio: AudioSource::Pcm(Arc::from(pcm)),
            }
        })
        .collect();
    Corpus::new(records)
}
