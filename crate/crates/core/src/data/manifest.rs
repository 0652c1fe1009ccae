//! CSV manifest (`speaker_id,condition,split,path`) and 16 kHz mono 16-bit
//! WAV I/O. Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioSource, Corpus, DataError, Split, UtteranceRecord, SAMPLE_RATE};

pub const MANIFEST_HEADER: [&str; 4] = ["speaker_id", "condition", "split", "path"];

fn wav_error(path: &Path, e: hound::Error) -> DataError {
    match e {
        hound::Error::IoError(source) => DataError::io(path, source),
        other => DataError::WavFormat {
            path: path.display().to_string(),
            detail: other.to_string(),
        },
    }
}

fn open_checked(path: &Path) -> Result<WavReader<std::io::BufReader<fs::File>>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(DataError::SampleRate {
            path: path.display().to_string(),
            rate: spec.sample_rate,
        });
    }
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(DataError::WavFormat {
            path: path.display().to_string(),
            detail: format!(
                "expected mono 16-bit PCM, got {} channel(s), {} bits, {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    Ok(reader)
}

pub fn read_wav(path: &Path) -> Result<Vec<i16>, DataError> {
    let reader = open_checked(path)?;
    reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| wav_error(path, e))
}

pub fn write_wav(path: &Path, samples: &[i16]) -> Result<(), DataError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Reads a manifest, validating every referenced file's header. Audio is
/// loaded lazily.
pub fn ingest_corpus(manifest: &Path) -> Result<Corpus, DataError> {
    let base = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let bad = |detail: String| DataError::Manifest {
        path: manifest.display().to_string(),
        detail,
    };
    if !manifest.is_file() {
        return Err(DataError::MissingFile(manifest.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(bad(format!(
            "header must be {}, got {}",
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let speaker = row[0].trim().to_string();
        if speaker.is_empty() {
            return Err(bad(format!("line {line}: empty speaker_id")));
        }
        let condition = match row[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::InvalidCondition {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let split = match row[2].trim() {
            "train" => Split::Train,
            "eval" => Split::Eval,
            other => {
                return Err(DataError::UnknownSplit {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let rel = row[3].trim();
        if !seen.insert((speaker.clone(), rel.to_string())) {
            return Err(DataError::Duplicate {
                line,
                speaker,
                path: rel.to_string(),
            });
        }
        let path = base.join(rel);
        let num_samples = open_checked(&path)?.duration() as usize;
        if num_samples == 0 {
            return Err(DataError::WavFormat {
                path: path.display().to_string(),
                detail: "no samples".into(),
            });
        }
        records.push(UtteranceRecord {
            speaker_id: speaker,
            condition,
            split,
            audio: AudioSource::Wav(path),
            num_samples,
        });
    }
    Corpus::new(records)
}

/// Writes `audio/<speaker>_<k>.wav` for every record plus `manifest.csv`
/// under `dir`; returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf, DataError> {
    let audio = dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| DataError::io(&audio, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&manifest)
        .map_err(|e| DataError::Manifest {
            path: manifest.display().to_string(),
            detail: e.to_string(),
        })?;
    let csv_err = |e: csv::Error| DataError::Manifest {
        path: manifest.display().to_string(),
        detail: e.to_string(),
    };
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;

    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for r in corpus.records() {
        let k = counts.entry(&r.speaker_id).or_default();
        let rel = format!("audio/{}_{:03}.wav", r.speaker_id, *k);
        *k += 1;
        write_wav(&dir.join(&rel), &r.samples()?)?;
        let condition = r.condition.to_string();
        let split = r.split.to_string();
        w.write_record([r.speaker_id.as_str(), &condition, &split, &rel])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::io(&manifest, e))?;
    Ok(manifest)
}
