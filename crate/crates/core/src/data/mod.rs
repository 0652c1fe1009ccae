//! Corpus records, the segmentation pipeline, WAV/manifest ingestion and a
//! synthetic corpus in which speaker identity and condition are entangled.

mod manifest;
mod segment;
mod synth;

use std::borrow::Cow;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{ingest_corpus, read_wav, write_corpus, write_wav, MANIFEST_HEADER};
pub use segment::{
    balance_subset, crop_and_segment, normalize, segment_eval, Segment, SegmentBatch, NORM_EPS,
};
pub use synth::{synth_generate, SynthConfig};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("utterances shorter than {required} samples: {}", offenders.join(", "))]
    TooShort {
        required: usize,
        offenders: Vec<String>,
    },
    #[error("no segments with condition {0}")]
    MissingClass(u8),
    #[error("no training utterances")]
    NoTrainingData,
    #[error("speaker {0} has no segments")]
    EmptySpeaker(String),
    #[error("{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")]
    SampleRate { path: String, rate: u32 },
    #[error("{path}: {detail}")]
    WavFormat { path: String, detail: String },
    #[error("audio file not found: {0}")]
    MissingFile(String),
    #[error("manifest line {line}: unknown split {value:?} (expected train or eval)")]
    UnknownSplit { line: usize, value: String },
    #[error("manifest line {line}: condition must be 0 or 1, got {value:?}")]
    InvalidCondition { line: usize, value: String },
    #[error("manifest line {line}: duplicate row for speaker {speaker} and path {path}")]
    Duplicate {
        line: usize,
        speaker: String,
        path: String,
    },
    #[error("speaker {0} appears with both condition labels")]
    InconsistentCondition(String),
    #[error("manifest {path}: {detail}")]
    Manifest { path: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

/// 16-bit PCM held in memory or read from a WAV file on demand.
#[derive(Clone, Debug)]
pub enum AudioSource {
    Pcm(Arc<[i16]>),
    Wav(PathBuf),
}

#[derive(Clone, Debug)]
pub struct UtteranceRecord {
    pub speaker_id: String,
    /// 1 = condition present (the positive class).
    pub condition: u8,
    pub split: Split,
    pub audio: AudioSource,
    pub num_samples: usize,
}

impl UtteranceRecord {
    pub fn samples(&self) -> Result<Cow<'_, [i16]>, DataError> {
        match &self.audio {
            AudioSource::Pcm(pcm) => Ok(Cow::Borrowed(pcm)),
            AudioSource::Wav(path) => read_wav(path).map(Cow::Owned),
        }
    }

    pub fn label(&self) -> String {
        match &self.audio {
            AudioSource::Wav(p) => p.display().to_string(),
            AudioSource::Pcm(_) => format!("{} ({} samples)", self.speaker_id, self.num_samples),
        }
    }
}

/// Records plus a speaker table. Speakers with training audio take ids
/// `0..num_train_speakers()` in first-appearance order; eval-only speakers
/// follow.
#[derive(Clone, Debug)]
pub struct Corpus {
    records: Vec<UtteranceRecord>,
    speakers: Vec<String>,
    conditions: Vec<u8>,
    num_train_speakers: usize,
}

impl Corpus {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self, DataError> {
        let mut speakers: Vec<String> = Vec::new();
        let mut conditions = Vec::new();
        let mut num_train_speakers = 0;
        for pass in [Split::Train, Split::Eval] {
            for r in records.iter().filter(|r| r.split == pass) {
                match speakers.iter().position(|s| *s == r.speaker_id) {
                    Some(i) if conditions[i] != r.condition => {
                        return Err(DataError::InconsistentCondition(r.speaker_id.clone()));
                    }
                    Some(_) => {}
                    None => {
                        speakers.push(r.speaker_id.clone());
                        conditions.push(r.condition);
                    }
                }
            }
            if pass == Split::Train {
                num_train_speakers = speakers.len();
            }
        }
        Ok(Self {
            records,
            speakers,
            conditions,
            num_train_speakers,
        })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn num_train_speakers(&self) -> usize {
        self.num_train_speakers
    }

    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == id)
    }

    pub fn speaker_condition(&self, index: usize) -> u8 {
        self.conditions[index]
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &UtteranceRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.split == split)
    }
}
