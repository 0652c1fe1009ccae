use serde::{Deserialize, Serialize};

use super::{GradMap, TrainError};
use crate::models::Parameter;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Descends the supplied direction. State is indexed like the parameter
/// registry it was created for.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &[Parameter]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        let adam = kind == OptimizerKind::Adam;
        Self {
            kind,
            lr: learning_rate as f32,
            t: 0,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Parameter], grads: &GradMap) -> Result<(), TrainError> {
        for p in params.iter() {
            match grads.get(&p.name) {
                Some(g) if g.len() == p.len() => {}
                Some(g) => {
                    return Err(TrainError::KeyMismatch(format!(
                        "{}: gradient has {} values, parameter {}",
                        p.name,
                        g.len(),
                        p.len()
                    )))
                }
                None => return Err(TrainError::KeyMismatch(p.name.clone())),
            }
        }
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    for (w, &g) in p.values.iter_mut().zip(&grads[&p.name]) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for (i, p) in params.iter_mut().enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (w, &g)) in p.values.iter_mut().zip(&grads[&p.name]).enumerate() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                        *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
