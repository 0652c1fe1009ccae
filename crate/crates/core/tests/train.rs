mod common;

use std::collections::{BTreeMap, BTreeSet};

use disentangle_lab::data::{
    crop_and_segment, segment_eval, synth_generate, Segment, SegmentBatch, SynthConfig,
};
use disentangle_lab::models::{build, Architecture, Component, ModelSpec, Parameter};
use disentangle_lab::train::{
    assemble_update, batch_gradients, mean_probability, predict_speaker_level, speaker_norms,
    train_ensemble, AdversarialConfig, GradMap, HeadMode, Optimizer, OptimizerKind, TrainConfig,
    TrainError, Trainer,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const SEG: usize = 4_096;

fn spec(seed: u64) -> ModelSpec {
    ModelSpec {
        channel_multiplier: 0.125,
        embedding_dim: 16,
        num_speakers: 4,
        segment_len: SEG,
        seed,
        ..ModelSpec::new(Architecture::EcapaLite)
    }
}

fn corpus_cfg() -> SynthConfig {
    SynthConfig {
        num_speakers: 4,
        utterances_per_speaker: 6,
        eval_utterances: 2,
        utterance_len_range: (SEG, SEG + 2_000),
        seed: 5,
        ..SynthConfig::default()
    }
}

fn segments() -> Vec<Segment> {
    crop_and_segment(&synth_generate(&corpus_cfg()).unwrap(), 1, SEG).unwrap()
}

fn tcfg(optimizer: OptimizerKind) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        optimizer,
        epochs: 2,
        batch_size: 4,
        ensemble_size: 3,
        seed: 9,
    }
}

fn random_maps(seed: u64) -> (GradMap, GradMap, BTreeMap<String, Component>) {
    let mut rng = common::rng(seed);
    let mut gm = GradMap::new();
    let mut gs = GradMap::new();
    let mut tags = BTreeMap::new();
    for i in 0..6 {
        let name = format!("p{i}");
        let n = rng.random_range(1..20);
        gm.insert(
            name.clone(),
            (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        );
        gs.insert(
            name.clone(),
            (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        );
        let c = if i % 2 == 0 {
            Component::FeatureExtraction
        } else {
            Component::FeatureProcessing
        };
        tags.insert(name, c);
    }
    (gm, gs, tags)
}

#[test]
fn worked_fe_update_example() {
    let gm = GradMap::from([("w".to_string(), vec![0.1f32])]);
    let gs = GradMap::from([("w".to_string(), vec![0.5f32])]);
    let tags = BTreeMap::from([("w".to_string(), Component::FeatureExtraction)]);
    let cfg = AdversarialConfig::nusd(2e-3, 4e-4);
    assert!((cfg.beta().unwrap() - 5.0).abs() < 1e-12);
    let g = assemble_update(&gm, &gs, &tags, &BTreeSet::new(), &cfg).unwrap();
    assert!((g["w"][0] as f64 - 0.099).abs() < 1e-7);
}

#[test]
fn equal_lambdas_match_usd_and_zero_matches_baseline() {
    for seed in 0..10 {
        let (gm, gs, tags) = random_maps(seed);
        let head = BTreeSet::new();
        let usd = assemble_update(&gm, &gs, &tags, &head, &AdversarialConfig::usd(3e-3)).unwrap();
        let nusd =
            assemble_update(&gm, &gs, &tags, &head, &AdversarialConfig::nusd(3e-3, 3e-3)).unwrap();
        assert_eq!(usd, nusd);
        let zero = assemble_update(&gm, &gs, &tags, &head, &AdversarialConfig::baseline()).unwrap();
        assert_eq!(zero, gm);
    }
}

#[test]
fn key_mismatch_and_undefined_beta_are_errors() {
    let (gm, mut gs, tags) = random_maps(1);
    gs.remove("p0");
    let r = assemble_update(
        &gm,
        &gs,
        &tags,
        &BTreeSet::new(),
        &AdversarialConfig::usd(1.0),
    );
    assert!(matches!(r, Err(TrainError::KeyMismatch(_))));
    assert!(matches!(
        AdversarialConfig::nusd(1e-3, 0.0).beta(),
        Err(TrainError::BetaUndefined)
    ));
}

#[test]
fn cooperative_head_descends_the_speaker_loss() {
    let (gm, gs, tags) = random_maps(2);
    let head = BTreeSet::from(["p1".to_string()]);
    let cfg = AdversarialConfig::nusd(0.3, 0.7).with_head_mode(HeadMode::CooperativeHead);
    let g = assemble_update(&gm, &gs, &tags, &head, &cfg).unwrap();
    for (i, v) in g["p1"].iter().enumerate() {
        assert_eq!(*v, gm["p1"][i] + gs["p1"][i]);
    }
    for (i, v) in g["p3"].iter().enumerate() {
        assert_eq!(*v, gm["p3"][i] - 0.7f32 * gs["p3"][i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn components_depend_only_on_their_own_lambda(
        seed: u64, l1 in 0.0f64..1.0, l2 in 0.0f64..1.0, other in 0.0f64..1.0,
    ) {
        let (gm, gs, tags) = random_maps(seed);
        let head = BTreeSet::new();
        let a = assemble_update(&gm, &gs, &tags, &head, &AdversarialConfig::nusd(l1, l2)).unwrap();
        let b = assemble_update(&gm, &gs, &tags, &head, &AdversarialConfig::nusd(l1, other)).unwrap();
        let c = assemble_update(&gm, &gs, &tags, &head, &AdversarialConfig::nusd(other, l2)).unwrap();
        for (k, comp) in &tags {
            match comp {
                Component::FeatureExtraction => prop_assert_eq!(&a[k], &b[k]),
                Component::FeatureProcessing => prop_assert_eq!(&a[k], &c[k]),
            }
        }
    }
}

fn toy_params() -> Vec<Parameter> {
    vec![Parameter {
        name: "w".into(),
        layer: "toy".into(),
        component: Component::FeatureExtraction,
        shape: vec![2],
        values: vec![0.5, -1.25],
    }]
}

#[test]
fn sgd_step_is_theta_minus_alpha_g() {
    // Loss 0.5*(w0 - 1)^2 + 2*w1 at w = (0.5, -1.25): gradient (-0.5, 2).
    let mut params = toy_params();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &params);
    let g = GradMap::from([("w".to_string(), vec![-0.5f32, 2.0])]);
    opt.step(&mut params, &g).unwrap();
    assert_eq!(params[0].values, vec![0.5 + 0.05, -1.25 - 0.2]);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut params = toy_params();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &params);
    let g = GradMap::from([("w".to_string(), vec![-0.5f32, 2.0])]);
    opt.step(&mut params, &g).unwrap();
    assert!((params[0].values[0] - 0.51).abs() < 1e-6);
    assert!((params[0].values[1] - -1.26).abs() < 1e-6);
}

#[test]
fn frozen_batch_lambda_scaling() {
    let model = build(&spec(1)).unwrap();
    let segs = segments();
    let batch = SegmentBatch::new(segs[..4].to_vec());
    let grads = batch_gradients(&model, &batch.segments).unwrap();
    let tags = model.tags();
    let head = BTreeSet::new();

    let (fe1, fp1) = speaker_norms(
        &grads.spk,
        &tags,
        &head,
        &AdversarialConfig::nusd(1e-4, 3e-4),
    );
    let (fe2, fp2) = speaker_norms(
        &grads.spk,
        &tags,
        &head,
        &AdversarialConfig::nusd(2e-4, 3e-4),
    );
    assert!(fe1 > 0.0);
    assert!((fe2 / fe1 - 2.0).abs() < 1e-6);
    assert_eq!(fp1, fp2);

    let a = assemble_update(
        &grads.mdd,
        &grads.spk,
        &tags,
        &head,
        &AdversarialConfig::nusd(1e-4, 3e-4),
    )
    .unwrap();
    let b = assemble_update(
        &grads.mdd,
        &grads.spk,
        &tags,
        &head,
        &AdversarialConfig::nusd(2e-4, 3e-4),
    )
    .unwrap();
    for (k, c) in &tags {
        if *c == Component::FeatureProcessing {
            assert_eq!(a[k], b[k], "{k}");
        }
    }
}

#[test]
fn zero_lambda_trajectory_matches_detached_training() {
    let segs = segments();
    let cfg = tcfg(OptimizerKind::Adam);
    let mut trainer = Trainer::new(
        build(&spec(2)).unwrap(),
        AdversarialConfig::baseline(),
        &cfg,
        0,
    )
    .unwrap();
    let mut reference = build(&spec(2)).unwrap();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, reference.params());
    for step in 0..5 {
        let batch = &segs[step * 3..step * 3 + 3];
        trainer.step(&SegmentBatch::new(batch.to_vec())).unwrap();
        common::detached_step(&mut reference, &mut opt, batch);
        assert_eq!(trainer.model().params(), reference.params(), "step {step}");
    }
}

#[test]
fn ensemble_is_deterministic_with_distinct_subsets() {
    let segs = segments();
    // Drop most positives so balanced subsets are a strict sample.
    let mut pos = 0;
    let segs: Vec<Segment> = segs
        .into_iter()
        .filter(|s| {
            if s.condition == 1 {
                pos += 1;
                pos <= 4
            } else {
                true
            }
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        ..tcfg(OptimizerKind::Sgd)
    };
    let adv = AdversarialConfig::nusd(1e-3, 2e-4);
    let a = train_ensemble(&segs, &spec(0), &adv, &cfg).unwrap();
    let b = train_ensemble(&segs, &spec(0), &adv, &cfg).unwrap();
    assert_eq!(a.members.len(), 3);
    for (x, y) in a.members.iter().zip(&b.members) {
        assert_eq!(x.params(), y.params());
    }
    for i in 0..3 {
        for j in i + 1..3 {
            assert_ne!(a.subsets[i], a.subsets[j]);
        }
    }
    assert_eq!(a.history.len(), 3);
    assert_eq!(a.history[2].member, 2);
    assert_eq!(TrainConfig::default().ensemble_size, 5);
}

#[test]
fn ensemble_requires_both_classes() {
    let segs: Vec<Segment> = segments()
        .into_iter()
        .filter(|s| s.condition == 0)
        .collect();
    let r = train_ensemble(
        &segs,
        &spec(0),
        &AdversarialConfig::baseline(),
        &tcfg(OptimizerKind::Sgd),
    );
    assert!(r.is_err());
}

#[test]
fn speaker_probability_aggregation() {
    assert!((mean_probability(&mut [0.2, 0.4, 0.6, 0.8]) - 0.5).abs() < 1e-15);

    let corpus = synth_generate(&corpus_cfg()).unwrap();
    let eval = segment_eval(&corpus, SEG).unwrap();
    let mut model = build(&spec(3)).unwrap();
    for p in model.params_mut() {
        if p.layer == "depression_prediction" {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let preds = predict_speaker_level(&[model.clone()], &corpus, &eval).unwrap();
    assert_eq!(preds.len(), 4);
    for p in &preds {
        assert_eq!(p.probability, 0.5);
        assert_eq!(p.label, 1);
    }

    let trained = build(&spec(4)).unwrap();
    let members = [trained.clone(), build(&spec(5)).unwrap()];
    let base = predict_speaker_level(&members, &corpus, &eval).unwrap();
    let mut shuffled = eval.clone();
    shuffled.shuffle(&mut common::rng(1));
    let again = predict_speaker_level(&members, &corpus, &shuffled).unwrap();
    assert_eq!(base, again);
}

#[test]
fn non_finite_parameters_name_the_layer() {
    let mut model = build(&spec(6)).unwrap();
    model.params_mut()[0].values[0] = f32::NAN;
    let mut t = Trainer::new(
        model,
        AdversarialConfig::usd(1e-3),
        &tcfg(OptimizerKind::Sgd),
        0,
    )
    .unwrap();
    match t.step(&SegmentBatch::new(segments()[..2].to_vec())) {
        Err(TrainError::NonFinite { layer, .. }) => assert_eq!(layer, "input_layer"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn speaker_ids_must_fit_the_head() {
    let model = build(&ModelSpec {
        num_speakers: 2,
        ..spec(0)
    })
    .unwrap();
    let segs: Vec<Segment> = segments()
        .into_iter()
        .filter(|s| s.speaker == 3)
        .take(1)
        .collect();
    assert!(matches!(
        batch_gradients(&model, &segs),
        Err(TrainError::SpeakerOutOfRange {
            speaker: 3,
            num_speakers: 2
        })
    ));
}
