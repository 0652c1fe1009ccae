use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActivationLayout, Component, LayerInfo, LayerRole, Parameter};
use crate::autodiff::layers::{ConvParams, DenseParams, LstmParams};
use crate::autodiff::Var;

/// Registry indices of a conv or dense layer's weight and bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct WeightBias {
    pub w: usize,
    pub b: usize,
}

impl WeightBias {
    pub fn conv(&self, vars: &[Var]) -> ConvParams {
        ConvParams {
            w: vars[self.w],
            b: vars[self.b],
        }
    }

    pub fn dense(&self, vars: &[Var]) -> DenseParams {
        DenseParams {
            w: vars[self.w],
            b: vars[self.b],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIdx {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b: usize,
}

impl LstmIdx {
    pub fn params(&self, vars: &[Var]) -> LstmParams {
        LstmParams {
            w_ih: vars[self.w_ih],
            w_hh: vars[self.w_hh],
            b: vars[self.b],
        }
    }
}

/// Accumulates layers and seeded, initialized parameters.
pub(crate) struct Builder {
    pub layers: Vec<LayerInfo>,
    pub params: Vec<Parameter>,
    rng: ChaCha8Rng,
}

impl Builder {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            layers: Vec::new(),
            params: Vec::new(),
            rng,
        }
    }

    pub fn layer(
        &mut self,
        name: &str,
        component: Component,
        role: LayerRole,
        layout: ActivationLayout,
    ) -> usize {
        self.layers.push(LayerInfo {
            name: name.to_string(),
            component,
            role,
            layout,
        });
        self.layers.len() - 1
    }

    fn component_of(&self, layer: &str) -> Component {
        self.layers
            .iter()
            .find(|l| l.name == layer)
            .map(|l| l.component)
            .expect("layer registered before its parameters")
    }

    fn push(&mut self, layer: &str, name: &str, shape: Vec<usize>, values: Vec<f32>) -> usize {
        let component = self.component_of(layer);
        self.params.push(Parameter {
            name: format!("{layer}.{name}"),
            layer: layer.to_string(),
            component,
            shape,
            values,
        });
        self.params.len() - 1
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<f32> {
        (0..n)
            .map(|_| self.rng.random_range(-bound..bound) as f32)
            .collect()
    }

    /// Kaiming-uniform (ReLU gain) on fan-in, zero bias.
    pub fn conv(
        &mut self,
        layer: &str,
        name: &str,
        c_out: usize,
        c_in: usize,
        kernel: usize,
    ) -> WeightBias {
        let fan_in = c_in * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = self.uniform(c_out * c_in * kernel, bound);
        let w = self.push(
            layer,
            &format!("{name}weight"),
            vec![c_out, c_in, kernel],
            w,
        );
        let b = self.push(layer, &format!("{name}bias"), vec![c_out], vec![0.0; c_out]);
        WeightBias { w, b }
    }

    pub fn dense(&mut self, layer: &str, name: &str, out: usize, inp: usize) -> WeightBias {
        let bound = (6.0 / inp as f64).sqrt();
        let w = self.uniform(out * inp, bound);
        let w = self.push(layer, &format!("{name}weight"), vec![out, inp], w);
        let b = self.push(layer, &format!("{name}bias"), vec![out], vec![0.0; out]);
        WeightBias { w, b }
    }

    /// Uniform on `±1/sqrt(hidden)` for all LSTM weights and the bias.
    pub fn lstm(&mut self, layer: &str, d_in: usize, hidden: usize) -> LstmIdx {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = self.uniform(4 * hidden * d_in, bound);
        let w_ih = self.push(layer, "w_ih", vec![4 * hidden, d_in], w_ih);
        let w_hh = self.uniform(4 * hidden * hidden, bound);
        let w_hh = self.push(layer, "w_hh", vec![4 * hidden, hidden], w_hh);
        let b = self.uniform(4 * hidden, bound);
        let b = self.push(layer, "bias", vec![4 * hidden], b);
        LstmIdx { w_ih, w_hh, b }
    }
}
