use std::fs;
use std::path::Path;
use std::process::Command;

use disentangle_lab::cli::{
    gen_data, sweep_beta, train, CliError, ExperimentConfig, Mode, RunReport,
};
use disentangle_lab::data::{synth_generate, SynthConfig};
use disentangle_lab::models::load_checkpoint;
use disentangle_lab::train::AdversarialConfig;

const BIN: &str = env!("CARGO_BIN_EXE_disentangle-lab");

fn tiny_toml(out: &Path, extra: &str) -> String {
    format!(
        r#"
seed = 3
output_dir = "{}"

[model]
architecture = "ecapa_lite"
channel_multiplier = 0.125
embedding_dim = 16
segment_len = 4096

[train]
learning_rate = 1e-3
epochs = 1
ensemble_size = 2
batch_size = 8

[data.synthetic]
num_speakers = 4
utterances_per_speaker = 6
eval_utterances = 2
utterance_len_range = [4096, 6000]
{extra}
"#,
        out.display()
    )
}

fn tiny(out: &Path, extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&tiny_toml(out, extra)).unwrap()
}

fn with_adv(section: &str) -> Result<AdversarialConfig, CliError> {
    let cfg = ExperimentConfig::from_toml(&tiny_toml(
        Path::new("/tmp/unused"),
        &format!("[adversarial]\n{section}"),
    ))?;
    cfg.adversarial.resolve(cfg.adversarial.mode)
}

fn run_bin(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn without_clock(mut r: RunReport) -> RunReport {
    r.wall_clock_secs = 0.0;
    r
}

#[test]
fn mode_mapping() {
    assert_eq!(
        with_adv("mode = \"baseline\"").unwrap(),
        AdversarialConfig::baseline()
    );
    let usd = with_adv("mode = \"usd\"\nlambda = 3e-3").unwrap();
    assert_eq!((usd.lambda1, usd.lambda2), (3e-3, 3e-3));
    let nusd = with_adv("mode = \"nusd\"\nlambda1 = 4e-5\nlambda2 = 8e-6").unwrap();
    assert!((nusd.beta().unwrap() - 5.0).abs() < 1e-12);
    let by_beta = with_adv("mode = \"nusd\"\nbeta = 5.0\nlambda2 = 8e-6").unwrap();
    assert_eq!(by_beta.lambda2, 8e-6);
    assert!((by_beta.lambda1 - 4e-5).abs() < 1e-18);
}

#[test]
fn config_errors_are_reported() {
    for bad in [
        "mode = \"usd\"",
        "mode = \"nusd\"\nlambda2 = 1e-3",
        "mode = \"nusd\"\nlambda1 = 1e-3\nbeta = 2.0\nlambda2 = 1e-3",
        "mode = \"nusd\"\nlambda1 = -1.0\nlambda2 = 1e-3",
        "mode = \"gan\"",
    ] {
        assert!(matches!(with_adv(bad), Err(CliError::Config(_))), "{bad}");
    }
    let two_sources = tiny_toml(Path::new("/tmp/x"), "[data]\nmanifest = \"m.csv\"");
    assert!(ExperimentConfig::from_toml(&two_sources).is_err());
    let seed_clash =
        tiny_toml(Path::new("/tmp/x"), "").replace("batch_size = 8", "batch_size = 8\nseed = 9");
    assert!(matches!(
        ExperimentConfig::from_toml(&seed_clash),
        Err(CliError::Config(_))
    ));
}

#[test]
fn resolved_config_carries_the_root_seed() {
    let cfg = tiny(Path::new("/tmp/x"), "");
    assert_eq!((cfg.train.seed, cfg.probe.seed), (3, 3));
    assert_eq!(cfg.adversarial.mode, Mode::Baseline);
}

#[test]
fn invalid_f0_range_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, tiny_toml(dir.path(), "f0_range = [300.0, 100.0]")).unwrap();
    let out = run_bin(&["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("f0_range"));
}

#[test]
fn default_synthetic_corpus_has_800_utterances() {
    let corpus = synth_generate(&SynthConfig::default()).unwrap();
    assert_eq!(corpus.records().len(), 20 * 40);
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    let a = gen_data(&cfg, &dir.path().join("a")).unwrap();
    let b = gen_data(&cfg, &dir.path().join("b")).unwrap();
    let manifest = fs::read_to_string(&a).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 4 * 6);
    assert_eq!(
        manifest,
        fs::read_to_string(&b).unwrap().replace("/b/", "/a/")
    );
    let mut files: Vec<_> = fs::read_dir(dir.path().join("a/audio"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert_eq!(files.len(), 24);
    for f in files {
        assert_eq!(
            fs::read(dir.path().join("a/audio").join(&f)).unwrap(),
            fs::read(dir.path().join("b/audio").join(&f)).unwrap()
        );
    }
}

#[test]
fn train_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(&tiny(&dir.path().join("a"), ""), None, None).unwrap();
    let b = train(&tiny(&dir.path().join("b"), ""), None, None).unwrap();
    for r in [&a, &b] {
        let run = r.checkpoint.parent().unwrap();
        assert!(run.ends_with("baseline"));
        for f in [
            "checkpoint.json",
            "report.json",
            "train_log.jsonl",
            "gdv.csv",
        ] {
            assert!(run.join(f).is_file(), "{f}");
        }
        assert_eq!(
            fs::read_to_string(run.join("train_log.jsonl"))
                .unwrap()
                .lines()
                .count(),
            2
        );
    }
    assert_eq!(a.config.model.num_speakers, 4);
    assert_eq!(a.f1.sid_accuracy, Some(a.probe.accuracy));
    assert_eq!(a.probe.chance, 0.25);

    let mut b_moved = without_clock(b.clone());
    b_moved.config.output_dir = a.config.output_dir.clone();
    b_moved.checkpoint = a.checkpoint.clone();
    b_moved.gdv_report = a.gdv_report.clone();
    assert_eq!(without_clock(a.clone()), b_moved);
    assert_eq!(
        fs::read(&a.checkpoint).unwrap(),
        fs::read(&b.checkpoint).unwrap()
    );
    assert_eq!(
        fs::read(&a.gdv_report).unwrap(),
        fs::read(&b.gdv_report).unwrap()
    );

    let saved: RunReport = serde_json::from_str(
        &fs::read_to_string(a.checkpoint.with_file_name("report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(saved, a);
}

#[test]
fn probe_and_gdv_commands_recompute_report_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    let report = train(&cfg, None, None).unwrap();
    let manifest = gen_data(&cfg, &dir.path().join("data")).unwrap();
    let ckpt = report.checkpoint.to_str().unwrap();
    let out = run_bin(&[
        "probe",
        "--baseline-ckpt",
        ckpt,
        "--target-ckpt",
        ckpt,
        "--data",
        manifest.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&str> = json
        .as_object()
        .unwrap()
        .keys()
        .map(|k| k.as_str())
        .collect();
    assert_eq!(keys.len(), 4);
    for k in ["train_tag", "eval_tag", "accuracy", "chance"] {
        assert!(keys.contains(&k));
    }
    assert_eq!(json["accuracy"].as_f64().unwrap(), report.probe.accuracy);

    let gdv = run_bin(&["gdv", "--ckpt", ckpt, "--data", manifest.to_str().unwrap()]);
    assert!(gdv.status.success());
    assert_eq!(gdv.stdout, fs::read(&report.gdv_report).unwrap());
    assert_eq!(
        gdv.stdout,
        run_bin(&["gdv", "--ckpt", ckpt, "--data", manifest.to_str().unwrap()]).stdout
    );
    assert!(String::from_utf8_lossy(&gdv.stdout).starts_with("layer,speaker_gdv,mdd_gdv\n"));
}

#[test]
fn probe_rejects_mismatched_embedding_dims() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(&tiny(&dir.path().join("a"), ""), None, None).unwrap();
    let wide =
        tiny_toml(&dir.path().join("b"), "").replace("embedding_dim = 16", "embedding_dim = 24");
    let b = train(&ExperimentConfig::from_toml(&wide).unwrap(), None, None).unwrap();
    let manifest = gen_data(&tiny(dir.path(), ""), &dir.path().join("data")).unwrap();
    let out = run_bin(&[
        "probe",
        "--baseline-ckpt",
        a.checkpoint.to_str().unwrap(),
        "--target-ckpt",
        b.checkpoint.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_manifest_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    let text = tiny_toml(dir.path(), "")
        .split("[data.synthetic]")
        .next()
        .unwrap()
        .to_string()
        + "[data]\nmanifest = \"/nonexistent/manifest.csv\"\n";
    fs::write(&path, text).unwrap();
    let out = run_bin(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn divergence_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nan.toml");
    fs::write(
        &path,
        tiny_toml(dir.path(), "").replace(
            "learning_rate = 1e-3",
            "learning_rate = 1e300\noptimizer = \"sgd\"",
        ),
    )
    .unwrap();
    let out = run_bin(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sweep_rows_are_sorted_and_beta_one_matches_usd() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_cfg = tiny(&dir.path().join("sweep"), "");
    let rows = sweep_beta(&sweep_cfg, &[1.0, 2.0], Some(3e-4)).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.beta).collect::<Vec<_>>(),
        vec![2.0, 1.0]
    );
    let csv = fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("beta,f1_avg,probe_accuracy"));
    assert_eq!(csv.lines().count(), 3);

    let usd_cfg = tiny(
        &dir.path().join("usd"),
        "[adversarial]\nmode = \"usd\"\nlambda = 3e-4",
    );
    let base = dir.path().join("sweep/baseline/checkpoint.json");
    let usd = train(&usd_cfg, None, Some(&base)).unwrap();
    assert_eq!(usd.f1.f1_avg, rows[1].f1_avg);
    assert_eq!(usd.probe.accuracy, rows[1].probe_accuracy);
    let from_sweep = load_checkpoint(&dir.path().join("sweep/beta_1/checkpoint.json")).unwrap();
    assert_eq!(
        load_checkpoint(&usd.checkpoint).unwrap().members,
        from_sweep.members
    );
}
