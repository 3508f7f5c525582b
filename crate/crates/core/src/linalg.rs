//! Small dense matrices and a cyclic Jacobi eigensolver for symmetric ones.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use thiserror::Error;

use crate::math::{abs, sqrt};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NotConverged { sweeps: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(abs(*x)))
    }

    /// Largest |a_ij - a_ji|; `None` when the matrix is not square.
    pub fn max_asymmetry(&self) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max(abs(self[(i, j)] - self[(j, i)]));
            }
        }
        Some(worst)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenpairs of a symmetric matrix. `values` are non-increasing and column
/// `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Inputs whose asymmetry exceeds this (relative to `max(1, max|a|)`) are
/// rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Convergence: every off-diagonal magnitude below this times the matrix scale.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps visit pairs `(p, q)` in row-major order, so the result is a pure
/// function of the input bits. Iteration stops once all off-diagonal entries
/// are below `1e-12` times the scale of the matrix, taken as
/// `max(|trace|, ‖A‖_F)`; for a covariance matrix that is its trace. Each
/// eigenvector's largest-magnitude entry is made positive.
pub fn symmetric_eigen(input: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    let n = input.rows();
    let asym = input.max_asymmetry().ok_or(LinalgError::NotSquare {
        rows: input.rows(),
        cols: input.cols(),
    })?;
    if input.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if asym > SYMMETRY_TOLERANCE * input.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric {
            max_asymmetry: asym,
        });
    }

    let mut a = input.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = abs(a.trace()).max(a.frobenius_norm());
    let tol = JACOBI_TOLERANCE * scale;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if max_off_diagonal(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && max_off_diagonal(&a) > tol {
        return Err(LinalgError::NotConverged { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal eigenvalues keep their diagonal order.
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));

    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, k)] = v[(r, src)];
        }
    }
    fix_signs(&mut vectors);
    Ok(SymmetricEigen { values, vectors })
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut worst = 0.0f64;
    for p in 0..n {
        for q in (p + 1)..n {
            worst = worst.max(abs(a[(p, q)]));
        }
    }
    worst
}

/// Annihilates `a[p][q]` with one plane rotation and accumulates it into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if abs(theta) > 1e150 {
        0.5 / theta
    } else {
        let t = 1.0 / (abs(theta) + sqrt(theta * theta + 1.0));
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / sqrt(t * t + 1.0);
    let s = t * c;

    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a[(r, p)] = new_rp;
        a[(p, r)] = new_rp;
        a[(r, q)] = new_rq;
        a[(q, r)] = new_rq;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

/// Flips each column so its largest-magnitude entry is positive. Entries
/// within a relative 1e-12 of the maximum count as tied; the first wins.
pub fn fix_signs(vectors: &mut Matrix) {
    for k in 0..vectors.cols() {
        let col = vectors.column(k);
        let max = col.iter().fold(0.0f64, |m, x| m.max(abs(*x)));
        if max == 0.0 {
            continue;
        }
        let pivot = col
            .iter()
            .position(|x| abs(*x) >= max * (1.0 - 1e-12))
            .unwrap_or(0);
        if col[pivot] < 0.0 {
            for r in 0..vectors.rows() {
                vectors[(r, k)] = -vectors[(r, k)];
            }
        }
    }
}

/// Modified Gram-Schmidt on the columns of `m`, in place. Columns that
/// collapse below `1e-12` of their original norm are zeroed.
pub fn orthonormalize_columns(m: &mut Matrix) {
    for k in 0..m.cols() {
        let orig = sqrt((0..m.rows()).map(|r| m[(r, k)] * m[(r, k)]).sum());
        for _pass in 0..2 {
            for j in 0..k {
                let dot: f64 = (0..m.rows()).map(|r| m[(r, k)] * m[(r, j)]).sum();
                for r in 0..m.rows() {
                    m[(r, k)] -= dot * m[(r, j)];
                }
            }
        }
        let norm = sqrt((0..m.rows()).map(|r| m[(r, k)] * m[(r, k)]).sum());
        let scale = if orig > 0.0 && norm > 1e-12 * orig {
            1.0 / norm
        } else {
            0.0
        };
        for r in 0..m.rows() {
            m[(r, k)] *= scale;
        }
    }
}
