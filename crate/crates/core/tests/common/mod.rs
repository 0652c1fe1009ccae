//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use disentangle_lab::autodiff::{Tape, Tensor, Var};
use disentangle_lab::data::Segment;
use disentangle_lab::models::Model;
use disentangle_lab::train::{GradMap, Optimizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-1.0..1.0) * scale)
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Relative error with the denominator floored so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares tape gradients against central finite differences of a scalar
/// projection `sum(out * R)` with a fixed random `R`.
///
/// `build` must be a pure function of the input values.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let projection = {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.shape(out).to_vec();
        random_tensor(&mut rng(seed ^ 0x5eed), &shape, 1.0)
    };
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let r = tape.constant(projection.clone());
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.sum_all(prod);
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for j in 0..input.len() {
            let orig = input.data()[j];
            perturbed[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&perturbed);
            perturbed[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&perturbed);
            perturbed[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Straightforward nested-loop convolution used as an independent oracle.
pub fn naive_conv1d(
    x: &[f64],
    c_in: usize,
    t_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    b: &[f64],
    stride: usize,
    pad: usize,
    dilation: usize,
) -> (usize, Vec<f64>) {
    let mut outputs = Vec::new();
    let mut t = 0usize;
    // Walk output positions until the dilated window leaves the padded signal.
    loop {
        let last = t * stride + dilation * (k - 1);
        if last >= t_in + 2 * pad {
            break;
        }
        t += 1;
    }
    let t_out = t;
    for co in 0..c_out {
        for t in 0..t_out {
            let mut acc = b[co];
            for ci in 0..c_in {
                for kk in 0..k {
                    let p = (t * stride + kk * dilation) as i64 - pad as i64;
                    if p >= 0 && (p as usize) < t_in {
                        acc += w[(co * c_in + ci) * k + kk] * x[ci * t_in + p as usize];
                    }
                }
            }
            outputs.push(acc);
        }
    }
    (t_out, outputs)
}

/// Brute-force GDV: population z-score times 0.5, then every pair visited
/// explicitly.
pub fn gdv_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut cols = Vec::new();
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 0.0 {
            cols.push((j, mean, var.sqrt()));
        }
    }
    let z: Vec<Vec<f64>> = points
        .iter()
        .map(|p| cols.iter().map(|&(j, m, s)| 0.5 * (p[j] - m) / s).collect())
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        z[a].iter()
            .zip(&z[b])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let members = |c: usize| (0..n).filter(move |&i| labels[i] == c);

    let mut intra = 0.0;
    for &c in &classes {
        let idx: Vec<usize> = members(c).collect();
        let (mut s, mut pairs) = (0.0, 0.0);
        for a in 0..idx.len() {
            for b in 0..idx.len() {
                if a < b {
                    s += dist(idx[a], idx[b]);
                    pairs += 1.0;
                }
            }
        }
        intra += s / pairs;
    }
    intra /= classes.len() as f64;

    let (mut inter, mut class_pairs) = (0.0, 0.0);
    for (x, &c1) in classes.iter().enumerate() {
        for &c2 in &classes[x + 1..] {
            let (mut s, mut pairs) = (0.0, 0.0);
            for i in members(c1) {
                for j in members(c2) {
                    s += dist(i, j);
                    pairs += 1.0;
                }
            }
            inter += s / pairs;
            class_pairs += 1.0;
        }
    }
    inter /= class_pairs;
    -(intra - inter) / (cols.len() as f64).sqrt()
}

pub fn random_gdv_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let classes = rng.random_range(2..6);
    let d = rng.random_range(1..=16);
    let n = rng.random_range(2 * classes..=200);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let points = labels
        .iter()
        .map(|&c| {
            centres[c]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    (points, labels)
}

/// Reference trainer that never touches the speaker loss.
pub fn detached_step(model: &mut Model, opt: &mut Optimizer, batch: &[Segment]) {
    let mut sum: Vec<Vec<f32>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    for s in batch {
        let mut tape = Tape::<f32>::new();
        let f = model.forward_on_tape(&mut tape, &s.samples, true).unwrap();
        let loss = tape
            .bce_with_logit(f.mdd_logit, s.condition as f64)
            .unwrap();
        tape.backward(loss).unwrap();
        for (acc, &v) in sum.iter_mut().zip(&f.params) {
            if let Some(g) = tape.grad(v) {
                acc.iter_mut().zip(g).for_each(|(a, &g)| *a += g);
            }
        }
    }
    let n = batch.len() as f32;
    let grads: GradMap = model
        .params()
        .iter()
        .zip(sum)
        .map(|(p, mut g)| {
            g.iter_mut().for_each(|v| *v /= n);
            (p.name.clone(), g)
        })
        .collect();
    opt.step(model.params_mut(), &grads).unwrap();
}
