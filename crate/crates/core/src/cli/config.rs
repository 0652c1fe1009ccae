use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::analysis::ProbeConfig;
use crate::data::{ingest_corpus, synth_generate, Corpus, SynthConfig};
use crate::models::ModelSpec;
use crate::train::{AdversarialConfig, HeadMode, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Baseline,
    Usd,
    Nusd,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Usd => "usd",
            Mode::Nusd => "nusd",
        }
    }
}

/// `[adversarial]`: `usd` reads `lambda`; `nusd` reads `lambda2` and one of
/// `lambda1` or `beta`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSection {
    #[serde(default)]
    pub mode: Mode,
    pub lambda: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub beta: Option<f64>,
    #[serde(default)]
    pub head_mode: HeadMode,
}

impl AdversarialSection {
    pub fn resolve(&self, mode: Mode) -> Result<AdversarialConfig, CliError> {
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| {
                CliError::Config(format!(
                    "adversarial.{field} is required in {} mode",
                    mode.name()
                ))
            })
        };
        let cfg = match mode {
            Mode::Baseline => AdversarialConfig::baseline(),
            Mode::Usd => AdversarialConfig::usd(need(self.lambda, "lambda")?),
            Mode::Nusd => {
                let lambda2 = need(self.lambda2, "lambda2")?;
                match (self.lambda1, self.beta) {
                    (Some(l1), None) => AdversarialConfig::nusd(l1, lambda2),
                    (None, Some(beta)) => AdversarialConfig::from_beta(beta, lambda2),
                    _ => return Err(CliError::Config(
                        "nusd mode needs exactly one of adversarial.lambda1 and adversarial.beta"
                            .into(),
                    )),
                }
            }
        }
        .with_head_mode(self.head_mode);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Manifest(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Corpus, CliError> {
        Ok(match self {
            DataSource::Synthetic(cfg) => synth_generate(cfg)?,
            DataSource::Manifest(path) => ingest_corpus(path)?,
        })
    }
}

/// One experiment. `seed` is the root of every random stream; the seed
/// fields of `[train]` and `[probe]` are filled from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub adversarial: AdversarialSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    pub data: DataSource,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.apply_root_seed()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn apply_root_seed(&mut self) -> Result<(), CliError> {
        for (field, v) in [
            ("train.seed", self.train.seed),
            ("probe.seed", self.probe.seed),
        ] {
            if v != 0 && v != self.seed {
                return Err(CliError::Config(format!(
                    "{field} = {v} conflicts with the root seed {}; set only `seed`",
                    self.seed
                )));
            }
        }
        self.train.seed = self.seed;
        self.probe.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        let p = &self.probe;
        if !(p.l2 > 0.0 && p.t0 > 0.0 && p.epochs > 0) {
            return Err(CliError::Config(
                "probe.l2, probe.t0 and probe.epochs must be positive".into(),
            ));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }
}
