//! Additive angular margin ("arc-margin") softmax loss.
//!
//! Logits are `s·cos θ_j` for every class except the target, whose logit is
//! `s·cos(θ_t + m)`; `θ_j` is the angle between the embedding and the
//! prototype column `j`. Both are normalized on use, so gradients flow back
//! through the normalization to the raw embedding and raw prototypes.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ParamSpec, Parameters};
use crate::math::{dot, norm, Matrix};
use crate::par;
use crate::rng::Rng;

/// Feature scale used throughout the reference configuration.
pub const DEFAULT_SCALE: f64 = 16.0;
/// Additive angular margin in radians.
pub const DEFAULT_MARGIN: f64 = 0.125;

/// Smallest `sin θ` used when differentiating `cos(θ + m)` near `θ = 0`.
const MIN_SIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcMarginHead {
    /// `d_embed × n_classes`; column `j` is class `j`'s prototype.
    pub prototypes: Matrix,
    pub scale: f64,
    pub margin: f64,
}

/// Loss, logits and cosines for one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub cosines: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcMarginGrad {
    pub loss: f64,
    pub grad_embedding: Vec<f64>,
    pub grad_prototypes: Matrix,
}

/// Summed loss and gradients over a batch, each sample weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossGrad {
    pub loss: f64,
    pub grad_embeddings: Matrix,
    pub grad_prototypes: Matrix,
}

struct SampleTerms {
    loss: f64,
    grad_embedding: Vec<f64>,
    /// ∂L/∂cos θ_j for every class.
    grad_cos: Vec<f64>,
    unit_embedding: Vec<f64>,
}

impl ArcMarginHead {
    pub fn new(prototypes: Matrix, scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config("scale", "must be positive"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::config("margin", "must lie in [0, π/2)"));
        }
        if prototypes.cols() == 0 || prototypes.rows() == 0 {
            return Err(Error::Degenerate("prototype matrix is empty".into()));
        }
        let head = Self {
            prototypes,
            scale,
            margin,
        };
        if head.column_norms().contains(&0.0) {
            return Err(Error::Degenerate("zero prototype column".into()));
        }
        Ok(head)
    }

    /// Prototype columns drawn uniformly on the unit sphere.
    pub fn init(d_embed: usize, n_classes: usize, scale: f64, margin: f64, rng: &mut Rng) -> Result<Self> {
        let mut protos = Matrix::zeros(d_embed, n_classes);
        for j in 0..n_classes {
            let col = loop {
                let v: Vec<f64> = (0..d_embed).map(|_| StandardNormal.sample(rng)).collect();
                let n = norm(&v);
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
                }
            };
            for (i, x) in col.into_iter().enumerate() {
                protos.set(i, j, x);
            }
        }
        Self::new(protos, scale, margin)
    }

    pub fn n_classes(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn d_embed(&self) -> usize {
        self.prototypes.rows()
    }

    fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.n_classes()];
        for row in self.prototypes.row_iter() {
            for (s, x) in sq.iter_mut().zip(row) {
                *s += x * x;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Unit prototypes stored one class per row (`n_classes × d_embed`).
    fn unit_prototypes(&self) -> Matrix {
        let mut t = self.prototypes.transpose();
        let norms = self.column_norms();
        for (j, n) in norms.into_iter().enumerate() {
            t.row_mut(j).iter_mut().for_each(|x| *x /= n);
        }
        t
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.n_classes() {
            return Err(Error::Label {
                label: target,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }

    fn check_embedding(&self, e: &[f64]) -> Result<f64> {
        if e.len() != self.d_embed() {
            return Err(Error::shape("arc-margin embedding", self.d_embed(), e.len()));
        }
        let n = norm(e);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Degenerate("embedding has zero or non-finite norm".into()));
        }
        Ok(n)
    }

    /// `cos(θ + m)` and its derivative w.r.t. `cos θ`, switching to the
    /// monotone surrogate `cos θ − m·sin m` once `θ + m` would pass π.
    fn margin_cos(&self, c: f64) -> (f64, f64) {
        let m = self.margin;
        if c < (std::f64::consts::PI - m).cos() {
            (c - m * m.sin(), 1.0)
        } else {
            let sin_t = (1.0 - c * c).max(0.0).sqrt();
            let value = c * m.cos() - sin_t * m.sin();
            let deriv = m.cos() + c * m.sin() / sin_t.max(MIN_SIN);
            (value, deriv)
        }
    }

    /// Cosine between the embedding and every prototype.
    pub fn cosines(&self, e: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_embedding(e)?;
        let unit = self.unit_prototypes();
        Ok(unit.row_iter().map(|w| (dot(w, e) / n).clamp(-1.0, 1.0)).collect())
    }

    /// Class with the largest plain `s·cos θ` logit (no margin).
    pub fn predict(&self, e: &[f64]) -> Result<usize> {
        let cos = self.cosines(e)?;
        Ok(argmax(&cos))
    }

    pub fn logits(&self, e: &[f64], target: usize) -> Result<Vec<f64>> {
        self.check_target(target)?;
        let cos = self.cosines(e)?;
        Ok(self.logits_from_cosines(&cos, target))
    }

    fn logits_from_cosines(&self, cos: &[f64], target: usize) -> Vec<f64> {
        cos.iter()
            .enumerate()
            .map(|(j, &c)| {
                if j == target {
                    self.scale * self.margin_cos(c).0
                } else {
                    self.scale * c
                }
            })
            .collect()
    }

    pub fn loss(&self, e: &[f64], target: usize) -> Result<LossOutput> {
        self.check_target(target)?;
        let cosines = self.cosines(e)?;
        let logits = self.logits_from_cosines(&cosines, target);
        let loss = softmax_cross_entropy(&logits, target)?;
        Ok(LossOutput {
            loss,
            logits,
            cosines,
        })
    }

    /// Loss and exact gradients w.r.t. the raw embedding and raw prototypes.
    pub fn grad(&self, e: &[f64], target: usize) -> Result<ArcMarginGrad> {
        self.check_target(target)?;
        self.check_embedding(e)?;
        let unit = self.unit_prototypes();
        let terms = self.sample_terms(&unit, e, target);
        let mut g_unit = Matrix::zeros(self.d_embed(), self.n_classes());
        accumulate_outer(&mut g_unit, &terms.unit_embedding, &terms.grad_cos, 1.0);
        Ok(ArcMarginGrad {
            loss: terms.loss,
            grad_embedding: terms.grad_embedding,
            grad_prototypes: self.through_column_normalization(&g_unit),
        })
    }

    /// Weighted sum of per-sample losses and its gradients. A zero embedding
    /// is scored as if every cosine were zero and passes no gradient back.
    pub fn batch_loss_grad(&self, embeddings: &Matrix, targets: &[usize], weight: f64) -> Result<BatchLossGrad> {
        if embeddings.rows() != targets.len() {
            return Err(Error::shape("batch targets", embeddings.rows(), targets.len()));
        }
        if embeddings.cols() != self.d_embed() {
            return Err(Error::shape("arc-margin embedding", self.d_embed(), embeddings.cols()));
        }
        for &t in targets {
            self.check_target(t)?;
        }
        let unit = self.unit_prototypes();
        let terms = par::map_range(targets.len(), |i| {
            self.sample_terms(&unit, embeddings.row(i), targets[i])
        });
        let mut loss = 0.0;
        let mut grad_embeddings = Matrix::zeros(embeddings.rows(), self.d_embed());
        let mut g_unit = Matrix::zeros(self.d_embed(), self.n_classes());
        for (i, t) in terms.iter().enumerate() {
            loss += weight * t.loss;
            grad_embeddings
                .row_mut(i)
                .iter_mut()
                .zip(&t.grad_embedding)
                .for_each(|(g, x)| *g = weight * x);
            accumulate_outer(&mut g_unit, &t.unit_embedding, &t.grad_cos, weight);
        }
        Ok(BatchLossGrad {
            loss,
            grad_embeddings,
            grad_prototypes: self.through_column_normalization(&g_unit),
        })
    }

    fn sample_terms(&self, unit: &Matrix, e: &[f64], target: usize) -> SampleTerms {
        let n = norm(e);
        let (unit_e, inv_n) = if n > 0.0 {
            (e.iter().map(|x| x / n).collect::<Vec<_>>(), 1.0 / n)
        } else {
            (vec![0.0; e.len()], 0.0)
        };
        let cos: Vec<f64> = unit.row_iter().map(|w| dot(w, &unit_e).clamp(-1.0, 1.0)).collect();
        let logits = self.logits_from_cosines(&cos, target);
        let probs = softmax(&logits);
        let loss = cross_entropy_from_logits(&logits, target);

        let grad_cos: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                if j == target {
                    self.scale * (p - 1.0) * self.margin_cos(cos[j]).1
                } else {
                    self.scale * p
                }
            })
            .collect();

        // ∂L/∂ê = Σ_j ∂L/∂c_j · ŵ_j, then through ê = e/‖e‖
        let mut g_unit_e = vec![0.0; e.len()];
        for (w, &g) in unit.row_iter().zip(&grad_cos) {
            g_unit_e.iter_mut().zip(w).for_each(|(a, &wi)| *a += g * wi);
        }
        let radial = dot(&g_unit_e, &unit_e);
        let grad_embedding = g_unit_e
            .iter()
            .zip(&unit_e)
            .map(|(g, u)| (g - radial * u) * inv_n)
            .collect();
        SampleTerms {
            loss,
            grad_embedding,
            grad_cos,
            unit_embedding: unit_e,
        }
    }

    /// Maps a gradient w.r.t. unit prototype columns back to raw columns.
    fn through_column_normalization(&self, g_unit: &Matrix) -> Matrix {
        let norms = self.column_norms();
        let mut out = Matrix::zeros(self.d_embed(), self.n_classes());
        for (j, &nj) in norms.iter().enumerate() {
            let w: Vec<f64> = self.prototypes.column(j);
            let g = g_unit.column(j);
            let radial: f64 = g.iter().zip(&w).map(|(a, b)| a * b / nj).sum();
            for i in 0..self.d_embed() {
                out.set(i, j, (g[i] - radial * w[i] / nj) / nj);
            }
        }
        out
    }
}

fn accumulate_outer(target: &mut Matrix, column: &[f64], row: &[f64], weight: f64) {
    for (i, &u) in column.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        for (t, &g) in target.row_mut(i).iter_mut().zip(row) {
            *t += weight * u * g;
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy_from_logits(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zt = logits[target];
    if zt >= max {
        // ln(1 + Σ_{j≠t} e^{z_j − z_t}) keeps precision when the loss is tiny
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(_, z)| (z - zt).exp())
            .sum();
        return rest.ln_1p();
    }
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    (lse - zt).max(0.0)
}

/// `−log softmax(logits)[target]` with max-subtraction.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Label {
            label: target,
            n_classes: logits.len(),
        });
    }
    Ok(cross_entropy_from_logits(logits, target))
}

impl Parameters for ArcMarginHead {
    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("arc.prototypes", &[self.d_embed(), self.n_classes()])]
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![self.prototypes.as_slice()]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.prototypes.as_mut_slice()]
    }
}
