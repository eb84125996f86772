//! Building blocks shared by the fusion heads: affine layers, batch
//! normalization, leaky ReLU and inverted dropout, each with an explicit
//! backward pass over a batch (rows are samples).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, Matrix};
use crate::rng::Rng;

/// Affine map `weight · x + bias` with `weight` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape("LinearLayer::new", weight.rows(), bias.len()));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Degenerate("non-finite bias".into()));
        }
        Ok(Self { weight, bias })
    }

    /// Weights and biases uniform in `±1/√in_dim`.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Matrix::new(out_dim, in_dim, weight).expect("finite init"),
            bias,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Single-vector forward pass.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::shape("linear_forward", self.in_dim(), x.len()));
        }
        Ok(self
            .weight
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    /// Batched forward pass: every row of `x` is one input.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("linear_forward", self.in_dim(), x.cols()));
        }
        let mut out = x.matmul_transposed(&self.weight)?;
        let n = self.out_dim();
        for row in out.as_mut_slice().chunks_mut(n) {
            row.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    /// Gradients given the layer input and the upstream gradient.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<(LinearGrads, Matrix)> {
        let weight = grad_out.transpose_matmul(x)?;
        let bias = grad_out.column_sums();
        let grad_in = grad_out.matmul(&self.weight)?;
        Ok((LinearGrads { weight, bias }, grad_in))
    }
}

/// Per-feature batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Values retained from a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
    /// Running statistics after this batch's momentum update.
    pub next_running_mean: Vec<f64>,
    pub next_running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape("batchnorm_forward", self.dim(), x.cols()));
        }
        Ok(())
    }

    /// Normalizes by batch statistics (population variance) and reports the
    /// running statistics this batch would produce (unbiased variance).
    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "train-mode batch norm needs at least 2 samples, got {n}"
            )));
        }
        let d = self.dim();
        let nf = n as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / nf).collect();
        let mut sq = vec![0.0; d];
        for row in x.row_iter() {
            for ((s, &v), &m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / nf).collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut x_hat = x.clone();
        let mut out = Matrix::zeros(n, d);
        for r in 0..n {
            let xr = x_hat.row_mut(r);
            for j in 0..d {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let or = out.row_mut(r);
            for j in 0..d {
                or[j] = self.gamma[j] * x_hat.get(r, j) + self.beta[j];
            }
        }

        let mom = self.momentum;
        let next_running_mean = self
            .running_mean
            .iter()
            .zip(&mean)
            .map(|(r, m)| (1.0 - mom) * r + mom * m)
            .collect();
        let next_running_var = self
            .running_var
            .iter()
            .zip(&sq)
            .map(|(r, s)| (1.0 - mom) * r + mom * s / (nf - 1.0))
            .collect();
        Ok((
            out,
            BatchNormCache {
                x_hat,
                inv_std,
                next_running_mean,
                next_running_var,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(&self.gamma)
            .map(|(v, g)| g / (v + self.eps).sqrt())
            .collect();
        let mut out = x.clone();
        for row in out.as_mut_slice().chunks_mut(self.dim().max(1)) {
            for j in 0..row.len() {
                row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta[j];
            }
        }
        Ok(out)
    }

    /// Adopts the running statistics recorded in `cache`.
    pub fn commit(&mut self, cache: &BatchNormCache) {
        self.running_mean.clone_from(&cache.next_running_mean);
        self.running_var.clone_from(&cache.next_running_var);
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Matrix) -> (BatchNormGrads, Matrix) {
        let n = grad_out.rows();
        let d = self.dim();
        let nf = n as f64;
        let beta = grad_out.column_sums();
        let mut gamma = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                gamma[j] += grad_out.get(r, j) * cache.x_hat.get(r, j);
            }
        }
        // dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dy·γ
        let sum_dxhat: Vec<f64> = beta.iter().zip(&self.gamma).map(|(b, g)| b * g).collect();
        let sum_dxhat_xhat: Vec<f64> = gamma.iter().zip(&self.gamma).map(|(a, g)| a * g).collect();
        let mut grad_in = Matrix::zeros(n, d);
        for r in 0..n {
            for j in 0..d {
                let dxhat = grad_out.get(r, j) * self.gamma[j];
                let v = cache.inv_std[j] / nf
                    * (nf * dxhat - sum_dxhat[j] - cache.x_hat.get(r, j) * sum_dxhat_xhat[j]);
                grad_in.set(r, j, v);
            }
        }
        (BatchNormGrads { gamma, beta }, grad_in)
    }
}

/// Element-wise `max(x, slope·x)`.
pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
}

pub(crate) fn leaky_relu_matrix(x: &Matrix, slope: f64) -> Matrix {
    let mut out = x.clone();
    out.as_mut_slice()
        .iter_mut()
        .for_each(|v| if *v <= 0.0 { *v *= slope });
    out
}

/// Multiplies `grad` by the activation slope at each pre-activation.
pub(crate) fn leaky_relu_backward(pre: &Matrix, grad: &Matrix, slope: f64) -> Matrix {
    let mut out = grad.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(pre.as_slice())
        .for_each(|(g, &z)| if z <= 0.0 { *g *= slope });
    out
}

/// Train or eval behavior for dropout and batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` at train time so
/// eval mode is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub probability: f64,
}

impl Default for Dropout {
    fn default() -> Self {
        Self { probability: 0.1 }
    }
}

impl Dropout {
    pub fn new(probability: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&probability) {
            return Err(Error::config("dropout", format!("probability {probability} not in [0, 1)")));
        }
        Ok(Self { probability })
    }

    /// Draws a `rows × cols` multiplicative mask with entries `0` or `1/(1−p)`.
    pub fn sample_mask(&self, rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let keep_scale = 1.0 / (1.0 - self.probability);
        let data = (0..rows * cols)
            .map(|_| {
                if rng.random::<f64>() < self.probability {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        Matrix::new(rows, cols, data).expect("finite mask")
    }

    /// Applies dropout to a single vector.
    pub fn apply(&self, x: &[f64], mode: Mode, rng: &mut Rng) -> Vec<f64> {
        match mode {
            Mode::Eval => x.to_vec(),
            Mode::Train => {
                let mask = self.sample_mask(1, x.len(), rng);
                apply_mask_vec(x, mask.as_slice())
            }
        }
    }
}

pub fn apply_mask_vec(x: &[f64], mask: &[f64]) -> Vec<f64> {
    x.iter().zip(mask).map(|(v, m)| v * m).collect()
}

pub(crate) fn hadamard(x: &Matrix, mask: &Matrix) -> Matrix {
    let mut out = x.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(mask.as_slice())
        .for_each(|(v, m)| *v *= m);
    out
}
