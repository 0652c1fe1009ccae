use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CliError, ExperimentConfig, Mode};
use crate::analysis::{
    embed, eval_probe, f1_report, layerwise_gdv, train_probe, F1Report, GdvReport, ProbeConfig,
};
use crate::data::{crop_and_segment, ingest_corpus, segment_eval, write_corpus, Corpus, Segment};
use crate::models::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelSpec};
use crate::train::{predict_speaker_level, train_ensemble, AdversarialConfig, SpeakerPrediction};

pub const DEFAULT_BETAS: [f64; 7] = [10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train_tag: String,
    pub eval_tag: String,
    pub accuracy: f64,
    pub chance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Resolved configuration.
    pub config: ExperimentConfig,
    pub mode: Mode,
    pub adversarial: AdversarialConfig,
    /// `sid_accuracy` carries the probe accuracy.
    pub f1: F1Report,
    pub probe: ProbeResult,
    pub predictions: Vec<SpeakerPrediction>,
    pub checkpoint: PathBuf,
    pub gdv_report: PathBuf,
    pub wall_clock_secs: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub f1_avg: f64,
    pub probe_accuracy: f64,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Config(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Writes the configured synthetic corpus under `out`; returns the manifest.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    if !matches!(cfg.data, super::DataSource::Synthetic(_)) {
        return Err(CliError::Config(
            "gen-data needs a [data.synthetic] section".into(),
        ));
    }
    let corpus = cfg.data.load()?;
    create_dir(out)?;
    Ok(write_corpus(&corpus, out)?)
}

struct Prepared {
    corpus: Corpus,
    train: Vec<Segment>,
    eval: Vec<Segment>,
    spec: ModelSpec,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let corpus = cfg.data.load()?;
    let spec = ModelSpec {
        num_speakers: corpus.num_train_speakers(),
        ..cfg.model.clone()
    };
    spec.validate()?;
    let train = crop_and_segment(&corpus, cfg.seed, spec.segment_len)?;
    let eval = segment_eval(&corpus, spec.segment_len)?;
    Ok(Prepared {
        corpus,
        train,
        eval,
        spec,
    })
}

/// Probe fitted on `baseline` training embeddings, scored on `target` eval
/// embeddings. Both are ensemble member 0.
fn probe_pair(
    baseline: (&Model, &str),
    target: (&Model, &str),
    train: &[Segment],
    eval: &[Segment],
    cfg: &ProbeConfig,
) -> Result<ProbeResult, CliError> {
    let probe = train_probe(&embed(baseline.0, train, baseline.1)?, cfg)?;
    let accuracy = eval_probe(&probe, &embed(target.0, eval, target.1)?)?;
    Ok(ProbeResult {
        train_tag: baseline.1.into(),
        eval_tag: target.1.into(),
        accuracy,
        chance: 1.0 / probe.classes.len() as f64,
    })
}

fn run_one(
    cfg: &ExperimentConfig,
    data: &Prepared,
    mode: Mode,
    adv: AdversarialConfig,
    label: &str,
    baseline: Option<(&Model, &str)>,
) -> Result<(RunReport, Vec<Model>), CliError> {
    let start = Instant::now();
    let dir = cfg.output_dir.join(label);
    create_dir(&dir)?;

    let ensemble = train_ensemble(&data.train, &data.spec, &adv, &cfg.train)?;
    let log_path = dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    for stats in &ensemble.history {
        let line = serde_json::to_string(stats).map_err(|e| CliError::io(&log_path, e.into()))?;
        writeln!(log, "{line}").map_err(|e| CliError::io(&log_path, e))?;
    }
    log.flush().map_err(|e| CliError::io(&log_path, e))?;

    let checkpoint = dir.join("checkpoint.json");
    save_checkpoint(
        &checkpoint,
        &Checkpoint::from_models(label, &ensemble.members)?,
    )?;

    let predictions = predict_speaker_level(&ensemble.members, &data.corpus, &data.eval)?;
    let pred: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let truth: Vec<u8> = predictions.iter().map(|p| p.condition).collect();
    let member = &ensemble.members[0];
    let probe = probe_pair(
        baseline.unwrap_or((member, label)),
        (member, label),
        &data.train,
        &data.eval,
        &cfg.probe,
    )?;
    let f1 = f1_report(&pred, &truth)?.with_sid_accuracy(probe.accuracy);

    let gdv_report = dir.join("gdv.csv");
    let gdv = layerwise_gdv(member, &data.eval)?;
    gdv.write_csv(File::create(&gdv_report).map_err(|e| CliError::io(&gdv_report, e))?)?;

    let mut config = cfg.clone();
    config.model = data.spec.clone();
    config.adversarial.mode = mode;
    let report = RunReport {
        config,
        mode,
        adversarial: adv,
        f1,
        probe,
        predictions,
        checkpoint,
        gdv_report,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok((report, ensemble.members))
}

/// Trains one ensemble in `mode` (default: the configured mode) and writes
/// `checkpoint.json`, `report.json`, `train_log.jsonl` and `gdv.csv` under
/// `<output_dir>/<mode>/`. Without `baseline_ckpt` the probe is fitted on the
/// run's own embeddings.
pub fn train(
    cfg: &ExperimentConfig,
    mode: Option<Mode>,
    baseline_ckpt: Option<&Path>,
) -> Result<RunReport, CliError> {
    let mode = mode.unwrap_or(cfg.adversarial.mode);
    let adv = cfg.adversarial.resolve(mode)?;
    let data = prepare(cfg)?;
    let baseline = match baseline_ckpt {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            Some((first_member(&ckpt)?, ckpt.label))
        }
        None => None,
    };
    let baseline_ref = baseline.as_ref().map(|(m, l)| (m, l.as_str()));
    Ok(run_one(cfg, &data, mode, adv, mode.name(), baseline_ref)?.0)
}

fn first_member(ckpt: &Checkpoint) -> Result<Model, CliError> {
    ckpt.into_models()?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Data("checkpoint has no members".into()))
}

/// Cross-model probe: train on the baseline checkpoint's training embeddings,
/// evaluate on the target checkpoint's eval embeddings.
pub fn probe(
    baseline_ckpt: &Path,
    target_ckpt: &Path,
    manifest: &Path,
    seed: u64,
) -> Result<ProbeResult, CliError> {
    let base = load_checkpoint(baseline_ckpt)?;
    let target = load_checkpoint(target_ckpt)?;
    if base.spec.embedding_dim != target.spec.embedding_dim {
        return Err(CliError::Data(format!(
            "embedding dimensions differ: {} vs {}",
            base.spec.embedding_dim, target.spec.embedding_dim
        )));
    }
    let corpus = ingest_corpus(manifest)?;
    let train = crop_and_segment(&corpus, seed, base.spec.segment_len)?;
    let eval = segment_eval(&corpus, target.spec.segment_len)?;
    probe_pair(
        (&first_member(&base)?, &base.label),
        (&first_member(&target)?, &target.label),
        &train,
        &eval,
        &ProbeConfig {
            seed,
            ..ProbeConfig::default()
        },
    )
}

/// Layer-wise GDV of the checkpoint's first member on the eval split.
pub fn gdv(ckpt: &Path, manifest: &Path) -> Result<GdvReport, CliError> {
    let ckpt = load_checkpoint(ckpt)?;
    let corpus = ingest_corpus(manifest)?;
    let eval = segment_eval(&corpus, ckpt.spec.segment_len)?;
    Ok(layerwise_gdv(&first_member(&ckpt)?, &eval)?)
}

/// One NUSD run per β with `λ₁ = β·λ₂`, plus a baseline run whose first
/// member fits the probe. Writes `<output_dir>/sweep.csv` sorted by β
/// descending.
pub fn sweep_beta(
    cfg: &ExperimentConfig,
    betas: &[f64],
    lambda2: Option<f64>,
) -> Result<Vec<SweepRow>, CliError> {
    let lambda2 = lambda2.or(cfg.adversarial.lambda2).ok_or_else(|| {
        CliError::Config("sweep-beta needs --lambda2 or adversarial.lambda2".into())
    })?;
    if betas.is_empty() {
        return Err(CliError::Config("empty beta list".into()));
    }
    let mut betas = betas.to_vec();
    betas.sort_by(|a, b| b.total_cmp(a));
    if betas.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("duplicate beta values".into()));
    }
    let head = cfg.adversarial.head_mode;
    let advs = betas
        .iter()
        .map(|&b| {
            let adv = AdversarialConfig::from_beta(b, lambda2).with_head_mode(head);
            adv.validate().map(|_| adv)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let data = prepare(cfg)?;
    let (_, base) = run_one(
        cfg,
        &data,
        Mode::Baseline,
        AdversarialConfig::baseline(),
        "baseline",
        None,
    )?;
    let rows = betas
        .par_iter()
        .zip(&advs)
        .map(|(&beta, &adv)| {
            let label = format!("beta_{beta}");
            let (report, _) = run_one(
                cfg,
                &data,
                Mode::Nusd,
                adv,
                &label,
                Some((&base[0], "baseline")),
            )?;
            Ok(SweepRow {
                beta,
                f1_avg: report.f1.f1_avg,
                probe_accuracy: report.probe.accuracy,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let path = cfg.output_dir.join("sweep.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    for row in &rows {
        w.serialize(row)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}
