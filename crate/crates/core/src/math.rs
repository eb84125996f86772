//! Dense vector and matrix arithmetic plus the angular geometry shared by
//! every other module. Vectors are plain `f64` slices; matrices are
//! row-major [`Matrix`] values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} elements", rows * cols),
                data.len(),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("matrix contains non-finite values".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `self · otherᵀ`; the batched form of applying a weight matrix to
    /// every row of `self`.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_transposed", self.cols, other.cols));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        let k = self.cols;
        par::for_each_row_mut(&mut out.data, other.rows, |i, out_row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a, &other.data[j * k..(j + 1) * k]);
            }
        });
        Ok(out)
    }

    /// `selfᵀ · other`; used to accumulate weight gradients over a batch.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("transpose_matmul", self.rows, other.rows));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bj) in out_row.iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// Column-wise sum, yielding one value per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("hstack", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Splits columns at `at` into `(left, right)`.
    pub fn split_cols(&self, at: usize) -> (Matrix, Matrix) {
        let mut left = Matrix::zeros(self.rows, at);
        let mut right = Matrix::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            let row = self.row(r);
            left.row_mut(r).copy_from_slice(&row[..at]);
            right.row_mut(r).copy_from_slice(&row[at..]);
        }
        (left, right)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{} rows on the right", a.cols),
            b.rows,
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    par::for_each_row_mut(&mut out.data, n, |i, out_row| {
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    });
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_nonzero(v: &[f64], what: &str) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Degenerate(format!("{what} is empty")));
    }
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate(format!("{what} has zero or non-finite norm")));
    }
    Ok(n)
}

fn check_same_dim(a: &[f64], b: &[f64], context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(context, a.len(), b.len()));
    }
    Ok(())
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = check_nonzero(v, "vector")?;
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim(a, b, "cosine_similarity")?;
    let na = check_nonzero(a, "left vector")?;
    let nb = check_nonzero(b, "right vector")?;
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Angle between `a` and `b` in degrees, in `[0, 180]`.
///
/// Computed as `2·atan2(‖â − b̂‖, ‖â + b̂‖)`, which stays accurate near 0°
/// and 180° where `acos` of the cosine loses half its digits.
pub fn angle_deg(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim(a, b, "angle_deg")?;
    let ua = l2_normalize(a)?;
    let ub = l2_normalize(b)?;
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in ua.iter().zip(&ub) {
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Element-wise arithmetic mean of a nonempty set of equal-length vectors.
pub fn centroid<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vec<f64>> {
    let first = vs
        .first()
        .ok_or_else(|| Error::Degenerate("centroid of an empty set".into()))?
        .as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        let v = v.as_ref();
        check_same_dim(first, v, "centroid")?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
