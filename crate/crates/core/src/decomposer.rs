//! Covariance PCA over the reference score matrix.
//!
//! Scores are centered by their column means, the sample covariance
//! `X_cᵀX_c / (N - 1)` is diagonalised with [`symmetric_eigen`], and the
//! leading `K` eigenvectors form the projection `W_K`. A document's component
//! scores are `W_Kᵀ(α - μ)`. For surrogate training each component is
//! additionally mapped affinely onto `[0, 5]` using the 0.5th and 99.5th
//! percentiles of the reference projections.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{symmetric_eigen, LinalgError, Matrix, SymmetricEigen};
use crate::math::{abs, clamp, sqrt, CompensatedSum};
use crate::model::{ScoreMatrix, ScoreVector};
use crate::stats::percentile_sorted;

/// Upper end of the rescaled component range.
pub const SCORE_MAX: f64 = 5.0;
pub const RESCALE_LOW_QUANTILE: f64 = 0.005;
pub const RESCALE_HIGH_QUANTILE: f64 = 0.995;
/// Minimum percentile spread for a component to be usable.
pub const MIN_RESCALE_SPREAD: f64 = 1e-9;
/// Eigenvalues down to `-1e-10 * trace` are rounding noise and clamp to 0.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("need at least 2 rows, got {rows}")]
    InsufficientData { rows: usize },
    #[error("all eigenvalues are zero")]
    DegenerateSpectrum,
    #[error("component {component} has no spread (hi - lo = {spread:e})")]
    DegeneratePc { component: usize, spread: f64 },
    #[error("explained-variance threshold must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("component count {k} must lie in [1, {m}]")]
    InvalidK { k: usize, m: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigenvalue {value:e} is too negative for a covariance matrix")]
    NegativeEigenvalue { value: f64 },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Column means and the centered matrix.
pub fn center(x: &Matrix) -> Result<(Vec<f64>, Matrix), DecomposeError> {
    let (n, m) = (x.rows(), x.cols());
    if n < 2 {
        return Err(DecomposeError::InsufficientData { rows: n });
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(DecomposeError::NonFinite);
    }
    let mut sums = alloc::vec![CompensatedSum::new(); m];
    for i in 0..n {
        for (s, v) in sums.iter_mut().zip(x.row(i)) {
            s.add(*v);
        }
    }
    let mu: Vec<f64> = sums.iter().map(|s| s.value() / n as f64).collect();
    let mut centered = x.clone();
    for i in 0..n {
        for (c, m) in centered.row_mut(i).iter_mut().zip(&mu) {
            *c -= m;
        }
    }
    Ok((mu, centered))
}

/// Sample covariance of an already centered matrix, accumulated in row
/// order. The result is exactly symmetric.
pub fn covariance(centered: &Matrix) -> Result<Matrix, DecomposeError> {
    let (n, m) = (centered.rows(), centered.cols());
    if n < 2 {
        return Err(DecomposeError::InsufficientData { rows: n });
    }
    let mut acc = Matrix::zeros(m, m);
    for i in 0..n {
        let row = centered.row(i);
        for a in 0..m {
            let ra = row[a];
            for b in a..m {
                acc[(a, b)] += ra * row[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..m {
        for b in a..m {
            let v = acc[(a, b)] / denom;
            acc[(a, b)] = v;
            acc[(b, a)] = v;
        }
    }
    Ok(acc)
}

pub fn eigendecompose(sigma: &Matrix) -> Result<SymmetricEigen, DecomposeError> {
    Ok(symmetric_eigen(sigma)?)
}

/// Clamps rounding-level negative eigenvalues of a covariance spectrum to 0.
pub fn clamp_spectrum(values: &[f64], trace: f64) -> Result<Vec<f64>, DecomposeError> {
    let floor = -NEGATIVE_EIGEN_TOLERANCE * abs(trace);
    values
        .iter()
        .map(|&l| {
            if l >= 0.0 {
                Ok(l)
            } else if l >= floor {
                Ok(0.0)
            } else {
                Err(DecomposeError::NegativeEigenvalue { value: l })
            }
        })
        .collect()
}

/// Smallest `K` whose leading eigenvalues explain at least `tau` of the
/// total variance. Tiny negative eigenvalues count as zero.
pub fn choose_k(eigenvalues: &[f64], tau: f64) -> Result<usize, DecomposeError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(DecomposeError::InvalidTau(tau));
    }
    let clamped: Vec<f64> = eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(DecomposeError::DegenerateSpectrum);
    }
    let mut cum = 0.0;
    for (i, l) in clamped.iter().enumerate() {
        cum += l;
        if cum / total >= tau {
            return Ok(i + 1);
        }
    }
    Ok(clamped.len())
}

/// Affine map of one component's raw scores onto `[0, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub lo: f64,
    pub hi: f64,
}

impl Rescale {
    pub fn apply(&self, raw: f64) -> f64 {
        clamp((raw - self.lo) / (self.hi - self.lo) * SCORE_MAX, 0.0, SCORE_MAX)
    }
}

/// Percentile-based rescale parameters of one component's reference scores.
pub fn fit_rescale(values: &[f64], component: usize) -> Result<Rescale, DecomposeError> {
    if values.is_empty() {
        return Err(DecomposeError::InsufficientData { rows: 0 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, RESCALE_LOW_QUANTILE);
    let hi = percentile_sorted(&sorted, RESCALE_HIGH_QUANTILE);
    let spread = hi - lo;
    if spread.is_nan() || spread < MIN_RESCALE_SPREAD {
        return Err(DecomposeError::DegeneratePc { component, spread });
    }
    Ok(Rescale { lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaOptions {
    /// Explained-variance threshold used when `k` is not given.
    pub tau: f64,
    /// Fixed component count; wins over `tau`.
    pub k: Option<usize>,
    /// Divide centered columns by their standard deviation before the
    /// covariance (correlation PCA).
    pub standardize: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            tau: 0.9,
            k: None,
            standardize: false,
        }
    }
}

/// A fitted decomposition. Column `j` of `eigenvectors` is `v_{j+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mu: Vec<f64>,
    /// Per-column standard deviations when standardized.
    pub scale: Option<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    pub k: usize,
    /// Threshold that chose `k`; `None` when `k` was fixed.
    pub tau: Option<f64>,
    pub rescale: Vec<Rescale>,
}

/// Component scores of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcScoreVector {
    #[serde(rename = "id")]
    pub doc_id: alloc::string::String,
    pub values: Vec<f64>,
}

impl PcaModel {
    pub fn fit_scores(matrix: &ScoreMatrix, options: PcaOptions) -> Result<Self, DecomposeError> {
        Self::fit(&matrix.to_matrix(), options)
    }

    /// Fits mean, spectrum, `K` and the rescale parameters on `x` (rows are
    /// documents). Trailing components whose reference projections have no
    /// spread are dropped from `K`.
    pub fn fit(x: &Matrix, options: PcaOptions) -> Result<Self, DecomposeError> {
        let m = x.cols();
        let (mu, mut centered) = center(x)?;
        let scale = if options.standardize {
            let n = x.rows();
            let mut sd = alloc::vec![0.0; m];
            for (j, s) in sd.iter_mut().enumerate() {
                let ss: f64 = (0..n).map(|i| centered[(i, j)] * centered[(i, j)]).sum();
                let v = sqrt(ss / (n - 1) as f64);
                *s = if v > 0.0 { v } else { 1.0 };
            }
            for i in 0..n {
                for (c, s) in centered.row_mut(i).iter_mut().zip(&sd) {
                    *c /= s;
                }
            }
            Some(sd)
        } else {
            None
        };
        let sigma = covariance(&centered)?;
        let eig = eigendecompose(&sigma)?;
        let eigenvalues = clamp_spectrum(&eig.values, sigma.trace())?;

        let (k, tau) = match options.k {
            Some(k) => {
                if k == 0 || k > m {
                    return Err(DecomposeError::InvalidK { k, m });
                }
                if eigenvalues.iter().all(|&l| l == 0.0) {
                    return Err(DecomposeError::DegenerateSpectrum);
                }
                (k, None)
            }
            None => (choose_k(&eigenvalues, options.tau)?, Some(options.tau)),
        };

        let mut model = PcaModel {
            mu,
            scale,
            eigenvalues,
            eigenvectors: eig.vectors,
            k,
            tau,
            rescale: Vec::new(),
        };

        let raw = model.project_matrix_raw(x)?;
        let mut rescale = Vec::with_capacity(k);
        for c in 0..k {
            match fit_rescale(&raw.column(c), c) {
                Ok(r) => rescale.push(r),
                Err(e @ DecomposeError::DegeneratePc { .. }) if c == 0 => return Err(e),
                Err(DecomposeError::DegeneratePc { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        model.k = rescale.len();
        model.rescale = rescale;
        Ok(model)
    }

    pub fn n_dims(&self) -> usize {
        self.mu.len()
    }

    pub fn standardized(&self) -> bool {
        self.scale.is_some()
    }

    /// `W_K`: the first `K` eigenvector columns.
    pub fn projection_matrix(&self) -> Matrix {
        let m = self.n_dims();
        let mut w = Matrix::zeros(m, self.k);
        for r in 0..m {
            for c in 0..self.k {
                w[(r, c)] = self.eigenvectors[(r, c)];
            }
        }
        w
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues
            .iter()
            .map(|l| if total > 0.0 { l / total } else { 0.0 })
            .collect()
    }

    fn centered_input(&self, alpha: &[f64]) -> Result<Vec<f64>, DecomposeError> {
        if alpha.len() != self.n_dims() {
            return Err(DecomposeError::DimensionMismatch {
                expected: self.n_dims(),
                got: alpha.len(),
            });
        }
        let mut d: Vec<f64> = alpha.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        if let Some(scale) = &self.scale {
            for (x, s) in d.iter_mut().zip(scale) {
                *x /= s;
            }
        }
        Ok(d)
    }

    /// `β = W_Kᵀ(α - μ)`, without rescaling.
    pub fn project_raw(&self, alpha: &[f64]) -> Result<Vec<f64>, DecomposeError> {
        let d = self.centered_input(alpha)?;
        Ok((0..self.k)
            .map(|c| {
                d.iter()
                    .enumerate()
                    .map(|(r, x)| x * self.eigenvectors[(r, c)])
                    .sum()
            })
            .collect())
    }

    /// Raw projections rescaled onto `[0, 5]` and clipped.
    pub fn project(&self, alpha: &[f64]) -> Result<Vec<f64>, DecomposeError> {
        let raw = self.project_raw(alpha)?;
        Ok(raw
            .iter()
            .zip(&self.rescale)
            .map(|(b, r)| r.apply(*b))
            .collect())
    }

    pub fn project_scores(&self, scores: &ScoreVector, rescaled: bool) -> Result<PcScoreVector, DecomposeError> {
        let values = if rescaled {
            self.project(&scores.values)?
        } else {
            self.project_raw(&scores.values)?
        };
        Ok(PcScoreVector {
            doc_id: scores.doc_id.clone(),
            values,
        })
    }

    /// Raw projections of every row of `x` (N×K).
    pub fn project_matrix_raw(&self, x: &Matrix) -> Result<Matrix, DecomposeError> {
        let mut out = Matrix::zeros(x.rows(), self.k);
        for i in 0..x.rows() {
            let beta = self.project_raw(x.row(i))?;
            out.row_mut(i).copy_from_slice(&beta);
        }
        Ok(out)
    }

    /// `μ + W_K β` (undoing standardisation); exact inverse of
    /// [`project_raw`](Self::project_raw) when `K = m`.
    pub fn reconstruct(&self, beta: &[f64]) -> Result<Vec<f64>, DecomposeError> {
        if beta.len() != self.k {
            return Err(DecomposeError::DimensionMismatch {
                expected: self.k,
                got: beta.len(),
            });
        }
        let m = self.n_dims();
        Ok((0..m)
            .map(|r| {
                let mut v: f64 = (0..self.k).map(|c| self.eigenvectors[(r, c)] * beta[c]).sum();
                if let Some(scale) = &self.scale {
                    v *= scale[r];
                }
                v + self.mu[r]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fixture() -> Matrix {
        Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    }

    #[test]
    fn center_hand_example() {
        let (mu, xc) = center(&fixture()).unwrap();
        assert_eq!(mu, vec![3.0, 4.0]);
        assert_eq!(xc, Matrix::from_rows(&[[-2.0, -2.0], [0.0, 0.0], [2.0, 2.0]]));
    }

    #[test]
    fn center_duplicated_row_is_zero() {
        let x = Matrix::from_rows(&[[1.5, 2.0, 3.0]; 5]);
        let (_, xc) = center(&x).unwrap();
        assert!(xc.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn center_needs_two_rows() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        assert_eq!(
            center(&x).unwrap_err(),
            DecomposeError::InsufficientData { rows: 1 }
        );
    }

    #[test]
    fn covariance_hand_example() {
        let xc = Matrix::from_rows(&[[-2.0, -2.0], [0.0, 0.0], [2.0, 2.0]]);
        assert_eq!(
            covariance(&xc).unwrap(),
            Matrix::from_rows(&[[4.0, 4.0], [4.0, 4.0]])
        );
        assert_eq!(covariance(&Matrix::zeros(4, 3)).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn covariance_of_independent_columns_is_near_identity() {
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..n * 4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Matrix::from_row_major(n, 4, data);
        let (_, xc) = center(&x).unwrap();
        let s = covariance(&xc).unwrap();
        let tol = 5.0 / (n as f64).sqrt();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((s[(i, j)] - target).abs() <= tol, "{i},{j}: {}", s[(i, j)]);
            }
        }
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(&[8.0, 0.0], 0.9).unwrap(), 1);
        assert_eq!(choose_k(&[4.0, 3.0, 2.0, 1.0], 0.69).unwrap(), 2);
        assert_eq!(choose_k(&[4.0, 3.0, 0.0, 0.0], 1.0).unwrap(), 2);
        assert_eq!(choose_k(&[3.0, 2.0, 1.0, -1e-18], 1.0).unwrap(), 3);
        assert_eq!(
            choose_k(&[0.0, 0.0], 0.5).unwrap_err(),
            DecomposeError::DegenerateSpectrum
        );
        assert!(matches!(choose_k(&[1.0], 0.0), Err(DecomposeError::InvalidTau(_))));
        assert!(matches!(choose_k(&[1.0], 1.5), Err(DecomposeError::InvalidTau(_))));
    }

    #[test]
    fn negative_eigenvalues_clamp_or_fail() {
        assert_eq!(clamp_spectrum(&[2.0, -1e-12], 2.0).unwrap(), vec![2.0, 0.0]);
        assert!(matches!(
            clamp_spectrum(&[2.0, -1e-3], 2.0),
            Err(DecomposeError::NegativeEigenvalue { .. })
        ));
    }

    #[test]
    fn hand_fixture_model() {
        let model = PcaModel::fit(&fixture(), PcaOptions { k: Some(1), ..Default::default() }).unwrap();
        assert!((model.eigenvalues[0] - 8.0).abs() < 1e-10);
        assert!(model.eigenvalues[1].abs() < 1e-10);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((model.eigenvectors[(0, 0)] - h).abs() < 1e-10);
        assert!((model.eigenvectors[(1, 0)] - h).abs() < 1e-10);
        let beta = model.project_raw(&[1.0, 2.0]).unwrap();
        assert!((beta[0] + 2.0 * 2f64.sqrt()).abs() < 1e-10);
        assert_eq!(model.project_raw(&[3.0, 4.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            model.project_raw(&[1.0]),
            Err(DecomposeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tau_selects_one_component_for_rank_one_data() {
        let model = PcaModel::fit(&fixture(), PcaOptions::default()).unwrap();
        assert_eq!(model.k, 1);
        assert_eq!(model.tau, Some(0.9));
    }

    #[test]
    fn forced_k_drops_degenerate_trailing_component() {
        let model = PcaModel::fit(&fixture(), PcaOptions { k: Some(2), ..Default::default() }).unwrap();
        assert_eq!(model.k, 1);
    }

    #[test]
    fn full_rank_reconstruction_recovers_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..50 * 5).map(|_| rng.random_range(0.0..5.0)).collect();
        let x = Matrix::from_row_major(50, 5, data);
        for standardize in [false, true] {
            let model = PcaModel::fit(&x, PcaOptions { k: Some(5), standardize, ..Default::default() }).unwrap();
            assert_eq!(model.k, 5);
            for i in 0..50 {
                let beta = model.project_raw(x.row(i)).unwrap();
                let back = model.reconstruct(&beta).unwrap();
                for (a, b) in back.iter().zip(x.row(i)) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn projection_of_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..30 * 4).map(|_| rng.random_range(0.0..4.0)).collect();
        let x = Matrix::from_row_major(30, 4, data);
        let model = PcaModel::fit(&x, PcaOptions { k: Some(3), ..Default::default() }).unwrap();
        let beta = model.project_raw(&model.mu.clone()).unwrap();
        assert!(beta.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn rescale_percentiles_on_uniform_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = fit_rescale(&xs, 0).unwrap();
        assert!((r.lo + 0.99).abs() < 0.005, "{}", r.lo);
        assert!((r.hi - 0.99).abs() < 0.005, "{}", r.hi);
    }

    #[test]
    fn rescale_maps_edges_and_midpoint() {
        let r = Rescale { lo: -2.0, hi: 6.0 };
        assert_eq!(r.apply(-2.0), 0.0);
        assert_eq!(r.apply(6.0), 5.0);
        assert_eq!(r.apply(2.0), 2.5);
        assert_eq!(r.apply(100.0), 5.0);
        assert_eq!(r.apply(-100.0), 0.0);
    }

    #[test]
    fn constant_component_is_degenerate() {
        assert!(matches!(
            fit_rescale(&[1.0; 10], 2),
            Err(DecomposeError::DegeneratePc { component: 2, .. })
        ));
    }

    #[test]
    fn decorrelated_projection_has_diagonal_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 2000;
        let mut data = Vec::with_capacity(n * 6);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let w: f64 = StandardNormal.sample(&mut rng);
            for j in 0..6 {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push(2.0 + z * (j as f64 * 0.3) + w * 0.5 + 0.4 * e);
            }
        }
        let x = Matrix::from_row_major(n, 6, data);
        let model = PcaModel::fit(&x, PcaOptions { k: Some(6), ..Default::default() }).unwrap();
        let beta = model.project_matrix_raw(&x).unwrap();
        let (_, bc) = center(&beta).unwrap();
        let cov = covariance(&bc).unwrap();
        let l1 = model.eigenvalues[0];
        for a in 0..6 {
            for b in 0..6 {
                if a == b {
                    assert!((cov[(a, a)] - model.eigenvalues[a]).abs() <= 1e-8 * l1);
                } else {
                    assert!(cov[(a, b)].abs() <= 1e-8 * l1);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn choose_k_is_monotone_in_tau(
            mut spectrum in proptest::collection::vec(0.0f64..10.0, 1..12),
            t1 in 0.01f64..1.0,
            t2 in 0.01f64..1.0,
        ) {
            spectrum.sort_by(|a, b| b.total_cmp(a));
            spectrum[0] += 0.1;
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            proptest::prop_assert!(choose_k(&spectrum, lo).unwrap() <= choose_k(&spectrum, hi).unwrap());
        }

        #[test]
        fn raw_projection_is_affine(
            a in proptest::collection::vec(0.0f64..5.0, 4),
            b in proptest::collection::vec(0.0f64..5.0, 4),
            t in -2.0f64..2.0,
        ) {
            let x = Matrix::from_rows(&[
                [1.0, 2.0, 0.0, 4.0],
                [2.0, 1.0, 3.0, 0.5],
                [0.0, 4.0, 1.0, 2.0],
                [3.0, 3.0, 2.0, 1.0],
                [4.0, 0.0, 4.0, 3.0],
            ]);
            let model = PcaModel::fit(&x, PcaOptions { k: Some(3), ..Default::default() }).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let pa = model.project_raw(&a).unwrap();
            let pb = model.project_raw(&b).unwrap();
            let pm = model.project_raw(&mix).unwrap();
            for c in 0..model.k {
                proptest::prop_assert!((pm[c] - (t * pa[c] + (1.0 - t) * pb[c])).abs() < 1e-10);
            }
        }
    }
}
