//! Dense numeric primitives shared by the model, the objective and the trainer.
//!
//! Everything is `f64`. Vectors are plain `Vec<f64>` / `&[f64]`; matrices are
//! row-major [`Matrix`] values.

use serde::{Deserialize, Serialize};

use crate::error::{DktError, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = DktError;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DktError::shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(DktError::shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(DktError::contract(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DktError::shape("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `W·x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(DktError::shape(format!(
            "affine: W is {}x{}, x has {}, b has {}",
            w.rows,
            w.cols,
            x.len(),
            b.len()
        )));
    }
    Ok((0..w.rows).map(|i| dot(w.row(i), x) + b[i]).collect())
}

/// Transposed product `Wᵀ·v`, accumulated into `out`.
pub fn add_transpose_matvec(w: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, v.len());
    debug_assert_eq!(w.cols, out.len());
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            axpy(vi, w.row(i), out);
        }
    }
}

/// Dot product with eight independent accumulators; the summation order is
/// fixed so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha·x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    // Two branches keep exp() from overflowing for large |x|.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

const CLIP_SLACK: f64 = 1e-12;

/// Euclidean norm over every entry of every tensor.
pub fn global_norm(tensors: &[&mut [f64]]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all tensors jointly so their global norm is at most `threshold`.
/// Returns the norm measured before clipping.
///
/// Norms within one part in 10¹² of the threshold count as already clipped,
/// which makes the operation idempotent under floating-point rounding.
pub fn clip_global_norm(tensors: &mut [&mut [f64]], threshold: f64) -> Result<f64> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(DktError::contract(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let norm = global_norm(tensors);
    if norm > threshold * (1.0 + CLIP_SLACK) {
        let scale = threshold / norm;
        for t in tensors.iter_mut() {
            for v in t.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// `(Σ|a−b|, Σ(a−b)²)`.
pub fn diff_norms(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(DktError::shape(format!(
            "diff_norms: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut l1 = 0.0;
    let mut l2sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        l1 += d.abs();
        l2sq += d * d;
    }
    Ok((l1, l2sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        let out = affine(&Matrix::identity(2), &[3.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![3.0, -1.0]);

        let out = affine(&Matrix::zeros(2, 2), &[7.0, -2.5], &[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);

        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(affine(&w, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let w = Matrix::zeros(2, 3);
        assert!(matches!(
            affine(&w, &[1.0, 2.0], &[0.0, 0.0]),
            Err(DktError::Shape(_))
        ));
        assert!(matches!(
            affine(&w, &[1.0, 2.0, 3.0], &[0.0]),
            Err(DktError::Shape(_))
        ));
    }

    #[test]
    fn matrix_rejects_non_finite_and_bad_length() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(&[0.0]), vec![0.5]);
        assert_eq!(tanh_vec(&[0.0]), vec![0.0]);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
        assert!(!sigmoid_scalar(-800.0).is_nan());
    }

    #[test]
    fn clip_examples() {
        let mut z = vec![0.0; 4];
        let n = clip_global_norm(&mut [&mut z[..]], 3.0).unwrap();
        assert_eq!(n, 0.0);
        assert_eq!(z, vec![0.0; 4]);

        let mut v = vec![3.0, 4.0];
        clip_global_norm(&mut [&mut v[..]], 10.0).unwrap();
        assert_eq!(v, vec![3.0, 4.0]);

        let mut v = vec![3.0, 4.0];
        let n = clip_global_norm(&mut [&mut v[..]], 1.0).unwrap();
        assert_eq!(n, 5.0);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);

        assert!(clip_global_norm(&mut [&mut v[..]], 0.0).is_err());
    }

    #[test]
    fn clip_spans_tensors() {
        let mut a = vec![3.0];
        let mut b = vec![0.0, 4.0];
        clip_global_norm(&mut [&mut a[..], &mut b[..]], 2.5).unwrap();
        assert!((a[0] - 1.5).abs() < 1e-15);
        assert!((b[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn diff_norm_examples() {
        assert_eq!(diff_norms(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), (0.0, 0.0));
        assert_eq!(diff_norms(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), (2.0, 2.0));
        assert_eq!(diff_norms(&[0.5], &[0.25]).unwrap(), (0.25, 0.0625));
        assert!(diff_norms(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -50.0f64..50.0) {
            prop_assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn affine_is_linear(
            w in vec_strategy(12),
            x in vec_strategy(4),
            z in vec_strategy(4),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let zero = [0.0; 3];
            let mixed: Vec<f64> = x.iter().zip(&z).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = affine(&w, &mixed, &zero).unwrap();
            let ax = affine(&w, &x, &zero).unwrap();
            let az = affine(&w, &z, &zero).unwrap();
            for i in 0..3 {
                let rhs = alpha * ax[i] + beta * az[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn clip_is_idempotent(mut a in vec_strategy(5), mut b in vec_strategy(3), t in 0.1f64..20.0) {
            clip_global_norm(&mut [&mut a[..], &mut b[..]], t).unwrap();
            let (a1, b1) = (a.clone(), b.clone());
            clip_global_norm(&mut [&mut a[..], &mut b[..]], t).unwrap();
            prop_assert_eq!(a1, a.clone());
            prop_assert_eq!(b1, b.clone());
            prop_assert!(global_norm(&[&mut a[..], &mut b[..]]) <= t * (1.0 + 1e-12));
        }

        #[test]
        fn diff_norms_cauchy_schwarz(a in vec_strategy(6), b in vec_strategy(6)) {
            let (l1, l2sq) = diff_norms(&a, &b).unwrap();
            let tol = 1e-9 * (1.0 + l1 * l1);
            prop_assert!(l1 * l1 + tol >= l2sq);
            prop_assert!(l2sq + tol >= l1 * l1 / 6.0);
        }
    }
}
