//! A small fully-connected network with tanh hidden layers and a linear
//! output, trained by plain mini-batch gradient descent.
//!
//! Shared by the acceptance classifier (sigmoid head, cross-entropy) and the
//! Q-network (linear head, squared temporal-difference error); both heads are
//! applied by the callers, which keeps the backward pass here checkable
//! against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Feature standardization fitted on training data and stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits per-dimension mean and standard deviation; constant dimensions
    /// get unit scale so they pass through centered.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "cannot fit a normalizer on no data");
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Dense network: `layer_sizes = [input, hidden..., output]`, tanh on hidden
/// layers, identity on the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// Per layer, row-major `[out][in]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer activations of one forward pass; `activations[0]` is the input
/// and the last entry the linear output.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has output")
    }
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for g in layer {
                *g *= factor;
            }
        }
    }
}

impl Mlp {
    /// Xavier-uniform initialization from the given generator.
    pub fn new(layer_sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    fn layer_forward(&self, layer: usize, input: &[f64], apply_tanh: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let w = &self.weights[layer];
        let mut out = self.biases[layer].clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            *out_v += acc;
            if apply_tanh {
                *out_v = out_v.tanh();
            }
        }
        let _ = n_out;
        out
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim());
        let last = self.num_layers() - 1;
        let mut current = input.to_vec();
        for layer in 0..=last {
            current = self.layer_forward(layer, &current, layer < last);
        }
        current
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        assert_eq!(input.len(), self.input_dim());
        let last = self.num_layers() - 1;
        let mut activations = vec![input.to_vec()];
        for layer in 0..=last {
            let next = self.layer_forward(layer, &activations[layer], layer < last);
            activations.push(next);
        }
        Trace { activations }
    }

    /// Accumulates parameter gradients for one sample given the loss gradient
    /// with respect to the linear output.
    pub fn backward(&self, trace: &Trace, dloss_doutput: &[f64], grads: &mut Gradients) {
        assert_eq!(dloss_doutput.len(), self.output_dim());
        let mut delta = dloss_doutput.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let n_in = self.layer_sizes[layer];
            let input = &trace.activations[layer];
            let gw = &mut grads.weights[layer];
            for (o, d) in delta.iter().enumerate() {
                grads.biases[layer][o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if layer == 0 {
                break;
            }
            let w = &self.weights[layer];
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            // tanh'(z) expressed through the stored activation.
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Overwrites the output-layer bias, e.g. to start a probability head at
    /// the label prior instead of 0.5.
    pub fn set_output_bias(&mut self, values: &[f64]) {
        let last = self.biases.last_mut().expect("network has layers");
        assert_eq!(values.len(), last.len());
        last.copy_from_slice(values);
    }

    /// Gradient-descent update: `theta -= scale * grad`.
    pub fn apply_step(&mut self, grads: &Gradients, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= scale * gi;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= scale * gi;
            }
        }
    }

    /// Flattened view of all parameters, weights then biases per layer.
    /// Used by finite-difference checks.
    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut idx = index;
        for layer in 0..self.weights.len() {
            if idx < self.weights[layer].len() {
                return &mut self.weights[layer][idx];
            }
            idx -= self.weights[layer].len();
            if idx < self.biases[layer].len() {
                return &mut self.biases[layer][idx];
            }
            idx -= self.biases[layer].len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn grad_at(grads: &Gradients, index: usize) -> f64 {
        let mut idx = index;
        for layer in 0..grads.weights.len() {
            if idx < grads.weights[layer].len() {
                return grads.weights[layer][idx];
            }
            idx -= grads.weights[layer].len();
            if idx < grads.biases[layer].len() {
                return grads.biases[layer][idx];
            }
            idx -= grads.biases[layer].len();
        }
        panic!("gradient index {index} out of range");
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
