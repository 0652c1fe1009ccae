//! Experiment driver behind the `disentangle-lab` binary.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    gdv, gen_data, probe, sweep_beta, train, ProbeResult, RunReport, SweepRow, DEFAULT_BETAS,
};
pub use config::{AdversarialSection, DataSource, ExperimentConfig, Mode};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "disentangle-lab",
    version,
    about = "Adversarial speaker disentanglement experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus as WAV files plus a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an ensemble and write checkpoint, report, log and GDV curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Fit the probe on this checkpoint instead of the run itself.
        #[arg(long)]
        baseline_ckpt: Option<PathBuf>,
    },
    /// Fit a speaker probe on baseline embeddings and score the target.
    Probe {
        #[arg(long)]
        baseline_ckpt: PathBuf,
        #[arg(long)]
        target_ckpt: PathBuf,
        /// Corpus manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Layer-wise speaker and condition GDV as CSV.
    Gdv {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// NUSD runs over a grid of β = λ₁/λ₂.
    SweepBeta {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BETAS)]
        betas: Vec<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            println!("{}", gen_data(&cfg, &out)?.display());
        }
        Command::Train {
            config,
            mode,
            baseline_ckpt,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = train(&cfg, mode, baseline_ckpt.as_deref())?;
            print_json(&report.f1)?;
            println!(
                "{}",
                report.checkpoint.with_file_name("report.json").display()
            );
        }
        Command::Probe {
            baseline_ckpt,
            target_ckpt,
            data,
            seed,
            out,
        } => {
            let result = probe(&baseline_ckpt, &target_ckpt, &data, seed)?;
            match out {
                Some(path) => commands::write_json(&path, &result)?,
                None => print_json(&result)?,
            }
        }
        Command::Gdv { ckpt, data, out } => {
            let report = gdv(&ckpt, &data)?;
            match out {
                Some(path) => report
                    .write_csv(std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?)?,
                None => report.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::SweepBeta {
            config,
            betas,
            lambda2,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            sweep_beta(&cfg, &betas, lambda2)?;
            println!("{}", cfg.output_dir.join("sweep.csv").display());
        }
    }
    Ok(())
}
