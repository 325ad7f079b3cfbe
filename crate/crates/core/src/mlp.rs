//! Dense layers and small multilayer perceptrons with explicit reverse-mode passes.
//!
//! Activations are row-major `rows x width` buffers. Batched products go
//! through `matrixmultiply`, whose per-element accumulation order depends only
//! on the inner dimension, so a row's forward result does not depend on how
//! many other rows share the batch.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weight.fill(0.0);
        self.bias.fill(0.0);
    }

    pub fn merge(&mut self, other: &LinearGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform fan-in initialization, bound `1/sqrt(in_dim)` for weights and bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `y = W x + b` for one vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(shape_err("linear input", self.in_dim, x.len()));
        }
        let mut y = vec![0.0; self.out_dim];
        self.forward_batch(x, 1, &mut y);
        Ok(y)
    }

    /// Accumulates weight and bias gradients for one vector and returns `dx`.
    pub fn backward_one(&self, x: &[f64], dy: &[f64], grad: &mut LinearGrad) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(shape_err("linear input", self.in_dim, x.len()));
        }
        if dy.len() != self.out_dim {
            return Err(shape_err("linear upstream", self.out_dim, dy.len()));
        }
        self.accumulate_grads(x, dy, 1, grad);
        let mut dx = vec![0.0; self.in_dim];
        self.input_grad(dy, 1, 0..self.in_dim, &mut dx);
        Ok(dx)
    }

    /// `y[rows x out] = x[rows x in] W^T + b`.
    pub fn forward_batch(&self, x: &[f64], rows: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        debug_assert_eq!(y.len(), rows * self.out_dim);
        for row in y.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias);
        }
        if rows == 0 || self.out_dim == 0 || self.in_dim == 0 {
            return;
        }
        unsafe {
            matrixmultiply::dgemm(
                rows,
                self.in_dim,
                self.out_dim,
                1.0,
                x.as_ptr(),
                self.in_dim as isize,
                1,
                self.weight.as_ptr(),
                1,
                self.in_dim as isize,
                1.0,
                y.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
    }

    /// `dW += dy^T x`, `db += colsum(dy)`.
    pub fn accumulate_grads(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut LinearGrad) {
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        if rows == 0 {
            return;
        }
        for row in dy.chunks_exact(self.out_dim) {
            for (b, d) in grad.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        unsafe {
            matrixmultiply::dgemm(
                self.out_dim,
                rows,
                self.in_dim,
                1.0,
                dy.as_ptr(),
                1,
                self.out_dim as isize,
                x.as_ptr(),
                self.in_dim as isize,
                1,
                1.0,
                grad.weight.as_mut_ptr(),
                self.in_dim as isize,
                1,
            );
        }
    }

    /// Writes `dy W` restricted to input columns `cols` into `dx[rows x cols.len()]`.
    pub fn input_grad(&self, dy: &[f64], rows: usize, cols: Range<usize>, dx: &mut [f64]) {
        let width = cols.len();
        debug_assert_eq!(dx.len(), rows * width);
        dx.fill(0.0);
        if rows == 0 || width == 0 {
            return;
        }
        unsafe {
            matrixmultiply::dgemm(
                rows,
                self.out_dim,
                width,
                1.0,
                dy.as_ptr(),
                self.out_dim as isize,
                1,
                self.weight.as_ptr().add(cols.start),
                self.in_dim as isize,
                1,
                0.0,
                dx.as_mut_ptr(),
                width as isize,
                1,
            );
        }
    }
}

fn shape_err(what: &str, want: usize, got: usize) -> Error {
    Error::InvalidInput(format!("{what}: expected {want} values, got {got}"))
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Stack of linear layers with ReLU between them, and optionally after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub final_relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<LinearGrad>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(LinearGrad::zeros_like).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.layers.iter_mut().for_each(LinearGrad::clear);
    }

    pub fn merge(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.merge(b);
        }
    }
}

/// Forward activations kept for the reverse pass. `acts[0]` is the input and
/// `acts[i]` the (post-activation) output of layer `i - 1`.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn init<R: Rng>(dims: &[usize], final_relu: bool, rng: &mut R) -> Self {
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers, final_relu }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    fn relu_after(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.final_relu
    }

    pub fn forward(&self, input: Vec<f64>, rows: usize) -> MlpTape {
        debug_assert_eq!(input.len(), rows * self.in_dim());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; rows * layer.out_dim];
            layer.forward_batch(acts.last().unwrap(), rows, &mut y);
            if self.relu_after(i) {
                y.iter_mut().for_each(|v| *v = relu(*v));
            }
            acts.push(y);
        }
        MlpTape { rows, acts }
    }

    /// Single-vector convenience wrapper.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x.to_vec(), 1).acts.pop().unwrap()
    }

    /// Reverse pass. `dy` is the gradient w.r.t. the final (post-activation)
    /// output. Returns the input gradient restricted to `input_cols`.
    pub fn backward(
        &self,
        tape: &MlpTape,
        mut dy: Vec<f64>,
        grad: &mut MlpGrad,
        input_cols: Range<usize>,
    ) -> Vec<f64> {
        let rows = tape.rows;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if self.relu_after(i) {
                for (d, &y) in dy.iter_mut().zip(&tape.acts[i + 1]) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            layer.accumulate_grads(&tape.acts[i], &dy, rows, &mut grad.layers[i]);
            if i == 0 {
                let mut dx = vec![0.0; rows * input_cols.len()];
                layer.input_grad(&dy, rows, input_cols, &mut dx);
                return dx;
            }
            let mut dx = vec![0.0; rows * layer.in_dim];
            layer.input_grad(&dy, rows, 0..layer.in_dim, &mut dx);
            dy = dx;
        }
        Vec::new()
    }

    /// Pre-activation values of every hidden ReLU for one forward pass.
    pub fn pre_activations(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; rows * layer.out_dim];
            layer.forward_batch(&x, rows, &mut y);
            if self.relu_after(i) {
                out.extend_from_slice(&y);
                y.iter_mut().for_each(|v| *v = relu(*v));
            }
            x = y;
        }
        out
    }
}
