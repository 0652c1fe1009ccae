mod common;

use std::collections::BTreeSet;

use disentangle_lab::models::{
    build, checkpoint::Checkpoint, load_checkpoint, save_checkpoint, ActivationLayout,
    Architecture, Component, ModelError, ModelSpec,
};
use rand::Rng;

fn small(arch: Architecture, seed: u64) -> ModelSpec {
    ModelSpec {
        channel_multiplier: 0.125,
        embedding_dim: 16,
        num_speakers: 5,
        segment_len: 4096,
        seed,
        ..ModelSpec::new(arch)
    }
}

fn noise(seed: u64, n: usize) -> Vec<f32> {
    let mut r = common::rng(seed);
    (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

const ECAPA_FE: [&str; 4] = ["input_layer", "se_res2_1", "se_res2_2", "se_res2_3"];
const ECAPA_FP: [&str; 6] = [
    "feature_aggregation",
    "concat_conv",
    "attentive_stats_pool",
    "embedding",
    "speaker_prediction",
    "depression_prediction",
];

#[test]
fn ecapa_tags_match_the_fe_fp_enumeration() {
    let m = build(&ModelSpec::new(Architecture::EcapaLite)).unwrap();
    assert_eq!(m.layer_names(Component::FeatureExtraction), ECAPA_FE);
    assert_eq!(m.layer_names(Component::FeatureProcessing), ECAPA_FP);
    for p in m.params() {
        let layer = m.layer(&p.layer).unwrap();
        assert_eq!(p.component, layer.component, "{}", p.name);
    }
}

#[test]
fn ecapa_full_scale_widths_and_parameter_budget() {
    let m = build(&ModelSpec::new(Architecture::EcapaLite)).unwrap();
    let concat = m
        .params()
        .iter()
        .find(|p| p.name == "concat_conv.weight")
        .unwrap();
    assert_eq!(concat.shape, vec![384, 384, 1]);
    let emb = m
        .params()
        .iter()
        .find(|p| p.name == "embedding.weight")
        .unwrap();
    assert_eq!(emb.shape, vec![128, 768]);

    let with = m.num_parameters() as f64;
    let without = m.num_parameters_without_speaker_head() as f64;
    assert!((with / 609e3 - 1.0).abs() <= 0.10, "{with}");
    assert!((without / 595e3 - 1.0).abs() <= 0.10, "{without}");
}

#[test]
fn depaudionet_parameter_budget_and_partition() {
    let m = build(&ModelSpec::new(Architecture::DepAudioNetLite)).unwrap();
    let n = m.num_parameters() as f64;
    assert!((n / 459e3 - 1.0).abs() <= 0.15, "{n}");
    assert_eq!(
        m.layer_names(Component::FeatureExtraction),
        ["conv1", "conv2"]
    );
    let fe: usize = m
        .params()
        .iter()
        .filter(|p| p.component == Component::FeatureExtraction)
        .map(|p| p.len())
        .sum();
    let fp: usize = m
        .params()
        .iter()
        .filter(|p| p.component == Component::FeatureProcessing)
        .map(|p| p.len())
        .sum();
    assert_eq!(fe + fp, m.num_parameters());
    let head = m
        .params()
        .iter()
        .find(|p| p.name == "speaker_prediction.weight")
        .unwrap();
    assert_eq!(head.shape[0], 107);
}

#[test]
fn quarter_multiplier_scales_every_channel_count() {
    let full = build(&ModelSpec::new(Architecture::EcapaLite)).unwrap();
    let quarter = build(&ModelSpec {
        channel_multiplier: 0.25,
        ..ModelSpec::new(Architecture::EcapaLite)
    })
    .unwrap();
    for c in [Component::FeatureExtraction, Component::FeatureProcessing] {
        let a: BTreeSet<_> = full.layer_names(c).into_iter().collect();
        let b: BTreeSet<_> = quarter.layer_names(c).into_iter().collect();
        assert_eq!(a, b);
    }
    let shape = |m: &disentangle_lab::models::Model, name: &str| {
        m.params()
            .iter()
            .find(|p| p.name == name)
            .unwrap()
            .shape
            .clone()
    };
    assert_eq!(shape(&quarter, "input_layer.weight"), vec![32, 1, 1024]);
    assert_eq!(shape(&quarter, "concat_conv.weight"), vec![96, 96, 1]);
    assert_eq!(
        shape(&quarter, "attentive_stats_pool.hidden.weight"),
        vec![32, 96, 1]
    );
    assert_eq!(shape(&quarter, "embedding.weight"), vec![128, 192]);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = ModelSpec {
        channel_multiplier: 0.3,
        ..ModelSpec::new(Architecture::EcapaLite)
    };
    assert!(matches!(build(&bad), Err(ModelError::InvalidSpec(_))));
    let bad = ModelSpec {
        num_speakers: 1,
        ..ModelSpec::new(Architecture::DepAudioNetLite)
    };
    assert!(matches!(build(&bad), Err(ModelError::InvalidSpec(_))));
    let bad = ModelSpec {
        channel_multiplier: -1.0,
        ..ModelSpec::new(Architecture::EcapaLite)
    };
    assert!(build(&bad).is_err());
}

#[test]
fn forward_shapes_at_defaults() {
    for arch in [Architecture::EcapaLite, Architecture::DepAudioNetLite] {
        let m = build(&ModelSpec {
            channel_multiplier: 0.25,
            ..ModelSpec::new(arch)
        })
        .unwrap();
        let out = m.forward(&noise(1, 61440)).unwrap();
        assert_eq!(out.spk_logits.shape(), &[107]);
        assert_eq!(out.mdd_logit.shape(), &[1]);
        assert_eq!(out.embedding.shape(), &[128]);
        let names: Vec<_> = out.activations.iter().map(|a| a.layer.as_str()).collect();
        let layers: Vec<_> = m.layers().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, layers);
        let flagged: Vec<_> = out
            .activations
            .iter()
            .filter(|a| a.prediction)
            .map(|a| a.layer.as_str())
            .collect();
        assert_eq!(flagged, ["speaker_prediction", "depression_prediction"]);
    }
}

#[test]
fn ecapa_input_layer_activation_has_119_frames() {
    let m = build(&ModelSpec {
        channel_multiplier: 0.25,
        ..ModelSpec::new(Architecture::EcapaLite)
    })
    .unwrap();
    let out = m.forward(&noise(2, 61440)).unwrap();
    let a = out.activation("input_layer").unwrap();
    assert_eq!(a.layout, ActivationLayout::ChannelsTime);
    assert_eq!(a.value.shape(), &[32, 119]);
    let emb = out.activation("embedding").unwrap();
    assert_eq!(emb.value.data(), out.embedding.data());
}

#[test]
fn wrong_segment_length_is_an_error() {
    let m = build(&small(Architecture::EcapaLite, 0)).unwrap();
    match m.forward(&noise(0, 4095)) {
        Err(ModelError::WrongSegmentLength { expected, actual }) => {
            assert_eq!((expected, actual), (4096, 4095));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn forward_is_finite_for_100_seeds() {
    for arch in [Architecture::EcapaLite, Architecture::DepAudioNetLite] {
        for seed in 0..100 {
            let m = build(&small(arch, seed)).unwrap();
            let out = m.forward(&noise(seed + 1000, 4096)).unwrap();
            for a in &out.activations {
                assert!(a.value.all_finite(), "{arch} seed {seed} layer {}", a.layer);
            }
        }
    }
}

#[test]
fn forward_is_deterministic_and_init_is_seeded() {
    let a = build(&small(Architecture::EcapaLite, 3)).unwrap();
    let b = build(&small(Architecture::EcapaLite, 3)).unwrap();
    let c = build(&small(Architecture::EcapaLite, 4)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    let x = noise(9, 4096);
    let (ya, yb) = (a.forward(&x).unwrap(), b.forward(&x).unwrap());
    for (u, v) in ya.activations.iter().zip(&yb.activations) {
        assert_eq!(u.value, v.value);
    }
}

#[test]
fn changing_fp_parameters_leaves_fe_activations_unchanged() {
    for arch in [Architecture::EcapaLite, Architecture::DepAudioNetLite] {
        let base = build(&small(arch, 11)).unwrap();
        let mut perturbed = base.clone();
        for p in perturbed.params_mut() {
            if p.component == Component::FeatureProcessing {
                p.values.iter_mut().for_each(|v| *v = *v * 1.5 + 0.01);
            }
        }
        let x = noise(12, 4096);
        let (a, b) = (base.forward(&x).unwrap(), perturbed.forward(&x).unwrap());
        for (u, v) in a.activations.iter().zip(&b.activations) {
            let fe = base.layer(&u.layer).unwrap().component == Component::FeatureExtraction;
            if fe {
                assert_eq!(u.value, v.value, "{arch} {}", u.layer);
            }
        }
        assert_ne!(a.mdd_logit, b.mdd_logit);
    }
}

#[test]
fn checkpoint_round_trips_exactly() {
    let models: Vec<_> = (0..2)
        .map(|s| build(&small(Architecture::DepAudioNetLite, s)).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let ckpt = Checkpoint::from_models("baseline", &models).unwrap();
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let restored = loaded.into_models().unwrap();
    for (a, b) in models.iter().zip(&restored) {
        assert_eq!(a.params(), b.params());
        assert_eq!(a.spec(), b.spec());
    }
}

#[test]
fn checkpoint_rejects_shape_mismatch() {
    let m = build(&small(Architecture::EcapaLite, 0)).unwrap();
    let mut ckpt = Checkpoint::from_models("x", &[m]).unwrap();
    ckpt.members[0].params[0].shape[0] += 1;
    assert!(matches!(ckpt.into_models(), Err(ModelError::Checkpoint(_))));
}
