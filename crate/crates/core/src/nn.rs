//! Dense building blocks shared by the encoder, channel layer and head.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::unit_symmetric;

/// Matrix with entries uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_matrix(rng: &mut impl RngCore, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || unit_symmetric(rng) * bound)
}

pub fn uniform_vector(rng: &mut impl RngCore, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_simple_fn(len, || unit_symmetric(rng) * bound)
}

/// `y = x W^T + b`, weight stored as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn init(rng: &mut impl RngCore, input: usize, output: usize) -> Self {
        Self {
            weight: uniform_matrix(rng, output, input, input),
            bias: uniform_vector(rng, output, input),
        }
    }

    /// Random weight, zero bias.
    pub fn init_no_bias(rng: &mut impl RngCore, input: usize, output: usize) -> Self {
        Self {
            weight: uniform_matrix(rng, output, input, input),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("linear input", self.input_dim(), x.ncols()));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }
}

/// Row-wise layer normalisation with affine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.gamma.len() {
            return Err(Error::shape("layer norm input", self.gamma.len(), x.ncols()));
        }
        let mut out = x.to_owned();
        let d = x.ncols() as f64;
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + self.eps).sqrt();
            row.zip_mut_with(&self.gamma, |v, g| *v = (*v - mean) * inv * g);
            row += &self.beta;
        }
        Ok(out)
    }
}

/// Two-layer ReLU feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn init(rng: &mut impl RngCore, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            inner: Linear::init(rng, input, hidden),
            outer: Linear::init(rng, hidden, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            inner: Linear::zeros(input, hidden),
            outer: Linear::zeros(hidden, output),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let hidden = self.inner.forward(x)?.mapv_into(relu);
        self.outer.forward(hidden.view())
    }
}

/// Stack of linear layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn init(rng: &mut impl RngCore, dims: &[usize]) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::init(rng, w[0], w[1]))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h.view())?;
            if i + 1 < self.layers.len() {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(mut row: ArrayViewMut1<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|v| (v - max).exp());
    let sum = row.sum();
    row /= sum;
}

/// Softmax restricted to positions where `mask` is true; all other positions
/// get exactly zero. At least one position must be unmasked.
pub fn masked_softmax_in_place<'a>(
    mut row: ArrayViewMut1<f64>,
    mask: impl IntoIterator<Item = &'a bool>,
) {
    let mask: Vec<bool> = mask.into_iter().copied().collect();
    let max = row
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    for (v, &m) in row.iter_mut().zip(&mask) {
        *v = if m { (*v - max).exp() } else { 0.0 };
    }
    let sum = row.sum();
    row /= sum;
}

/// Softmax over the last axis of a 2-D array.
pub fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for row in x.axis_iter_mut(Axis(0)) {
        softmax_in_place(row);
    }
    x
}
