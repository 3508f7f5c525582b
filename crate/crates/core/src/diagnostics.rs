//! Correlation, loading, embedding-distance and score-distribution analyses.
//!
//! Everything here consumes finished artifacts and produces plain tables; no
//! rendering happens in this crate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::PcaModel;
use crate::linalg::{orthonormalize_columns, symmetric_eigen, LinalgError, Matrix};
use crate::math::{fnv1a_extend, floor, splitmix64, sqrt, FNV_OFFSET};
use crate::model::ScoreMatrix;
use crate::stats::{is_degenerate, mean, pearson, percentile_sorted};

/// Bins of the pairwise cosine-distance histogram over `[0, 2]`.
pub const DISTANCE_BINS: usize = 40;
/// Score histograms use 50 bins over `[0, 5]`.
pub const SCORE_BINS: usize = 50;
pub const SCORE_RANGE: f64 = 5.0;
/// Domain label for documents without a tag.
pub const UNKNOWN_DOMAIN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero or non-finite vectors: {0:?}")]
    ZeroVectors(Vec<String>),
    #[error("cannot remove {c} components from {d}-dimensional vectors")]
    TooManyComponents { c: usize, d: usize },
    #[error("duplicate embedding id {0}")]
    DuplicateId(String),
    #[error("unknown embedding id {0}")]
    UnknownId(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Pearson coefficients between named series. Degenerate (constant) series
/// are flagged and correlate 0 with everything, themselves included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub row_degenerate: Vec<bool>,
    pub col_degenerate: Vec<bool>,
}

impl CorrelationMatrix {
    /// Correlations between every row series and every column series.
    pub fn between(
        row_labels: Vec<String>,
        rows: &[Vec<f64>],
        col_labels: Vec<String>,
        cols: &[Vec<f64>],
    ) -> Result<Self, DiagnosticsError> {
        let n = rows.first().or(cols.first()).map_or(0, Vec::len);
        for s in rows.iter().chain(cols) {
            if s.len() != n {
                return Err(DiagnosticsError::DimensionMismatch {
                    expected: n,
                    got: s.len(),
                });
            }
        }
        if n < 2 {
            return Err(DiagnosticsError::TooFewRows { needed: 2, got: n });
        }
        let values = rows
            .iter()
            .map(|r| cols.iter().map(|c| pearson(r, c).unwrap_or(0.0)).collect())
            .collect();
        Ok(Self {
            row_labels,
            col_labels,
            values,
            row_degenerate: rows.iter().map(|s| is_degenerate(s)).collect(),
            col_degenerate: cols.iter().map(|s| is_degenerate(s)).collect(),
        })
    }

    /// Square matrix of a series against itself, with an exact unit diagonal
    /// and exact symmetry.
    pub fn square(labels: Vec<String>, series: &[Vec<f64>]) -> Result<Self, DiagnosticsError> {
        let mut m = Self::between(labels.clone(), series, labels, series)?;
        let k = series.len();
        for a in 0..k {
            m.values[a][a] = if m.row_degenerate[a] { 0.0 } else { 1.0 };
            for b in 0..a {
                m.values[a][b] = m.values[b][a];
            }
        }
        Ok(m)
    }
}

/// Correlations between the score dimensions.
pub fn dimension_correlations(matrix: &ScoreMatrix) -> Result<CorrelationMatrix, DiagnosticsError> {
    let x = matrix.to_matrix();
    let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.column(j)).collect();
    if x.rows() < 2 {
        return Err(DiagnosticsError::TooFewRows { needed: 2, got: x.rows() });
    }
    CorrelationMatrix::square(matrix.labels(), &cols)
}

/// Correlation of each original dimension with each retained component's
/// raw score.
pub fn structure_loadings(model: &PcaModel, matrix: &ScoreMatrix) -> Result<CorrelationMatrix, DiagnosticsError> {
    structure_loadings_n(model, matrix, model.k)
}

/// Like [`structure_loadings`] for the first `n` components, which may go
/// past the retained ones.
pub fn structure_loadings_n(
    model: &PcaModel,
    matrix: &ScoreMatrix,
    n: usize,
) -> Result<CorrelationMatrix, DiagnosticsError> {
    loadings_of(model, &matrix.to_matrix(), matrix.labels(), n)
}

/// Loadings for an unvalidated data matrix with the given column labels.
pub fn loadings_of(
    model: &PcaModel,
    x: &Matrix,
    labels: Vec<String>,
    n: usize,
) -> Result<CorrelationMatrix, DiagnosticsError> {
    let m = model.n_dims();
    if x.cols() != m {
        return Err(DiagnosticsError::DimensionMismatch {
            expected: m,
            got: x.cols(),
        });
    }
    let n = n.min(m);
    let originals: Vec<Vec<f64>> = (0..m).map(|j| x.column(j)).collect();
    let mut pcs = vec![Vec::with_capacity(x.rows()); n];
    for i in 0..x.rows() {
        let mut d: Vec<f64> = x.row(i).iter().zip(&model.mu).map(|(a, mu)| a - mu).collect();
        if let Some(scale) = &model.scale {
            for (v, s) in d.iter_mut().zip(scale) {
                *v /= s;
            }
        }
        for (c, pc) in pcs.iter_mut().enumerate() {
            pc.push((0..m).map(|r| d[r] * model.eigenvectors[(r, c)]).sum());
        }
    }
    let pc_labels = (1..=n).map(|k| alloc::format!("PC{k}")).collect();
    CorrelationMatrix::between(labels, &originals, pc_labels, &pcs)
}

/// How far the raw component scores of a data set are from uncorrelated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationResiduals {
    /// Largest off-diagonal sample covariance.
    pub max_offdiag_covariance: f64,
    /// The same divided by the leading eigenvalue.
    pub relative_to_lambda1: f64,
    /// Largest Pearson |r| between distinct components.
    pub max_abs_pearson: f64,
}

/// Projects every row of `x` onto the retained components and measures
/// their residual covariance and correlation.
pub fn decorrelation_residuals(model: &PcaModel, x: &Matrix) -> Result<DecorrelationResiduals, DiagnosticsError> {
    if x.rows() < 2 {
        return Err(DiagnosticsError::TooFewRows { needed: 2, got: x.rows() });
    }
    if x.cols() != model.n_dims() {
        return Err(DiagnosticsError::DimensionMismatch {
            expected: model.n_dims(),
            got: x.cols(),
        });
    }
    let mut pcs: Vec<Vec<f64>> = vec![Vec::with_capacity(x.rows()); model.k];
    for i in 0..x.rows() {
        let beta = model
            .project_raw(x.row(i))
            .expect("dimension checked above");
        for (c, b) in beta.into_iter().enumerate() {
            pcs[c].push(b);
        }
    }
    let means: Vec<f64> = pcs.iter().map(|p| mean(p)).collect();
    let n = x.rows() as f64;
    let mut max_cov = 0.0f64;
    let mut max_r = 0.0f64;
    for a in 0..model.k {
        for b in (a + 1)..model.k {
            let cov = crate::math::compensated_sum(
                pcs[a].iter().zip(&pcs[b]).map(|(u, v)| (u - means[a]) * (v - means[b])),
            ) / (n - 1.0);
            max_cov = max_cov.max(cov.abs());
            max_r = max_r.max(pearson(&pcs[a], &pcs[b]).unwrap_or(0.0).abs());
        }
    }
    let lambda1 = model.eigenvalues.first().copied().unwrap_or(0.0);
    Ok(DecorrelationResiduals {
        max_offdiag_covariance: max_cov,
        relative_to_lambda1: if lambda1 > 0.0 { max_cov / lambda1 } else { 0.0 },
        max_abs_pearson: max_r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessRecord {
    pub normalized: bool,
    pub components_removed: usize,
}

/// Fixed-dimension vectors keyed by document id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    postprocess: Option<PostprocessRecord>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            dim,
            data: Vec::new(),
            postprocess: None,
        }
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, DiagnosticsError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut set = Self::new(dim);
        for (id, row) in ids.into_iter().zip(rows) {
            set.push(id, row)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, id: String, vector: &[f64]) -> Result<(), DiagnosticsError> {
        if vector.len() != self.dim {
            return Err(DiagnosticsError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn postprocess(&self) -> Option<PostprocessRecord> {
        self.postprocess
    }

    /// The members named by `ids`, in that order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self, DiagnosticsError> {
        let index = self.index()?;
        let mut out = Self::new(self.dim);
        out.postprocess = self.postprocess;
        for id in ids {
            let i = *index
                .get(id.as_ref())
                .ok_or_else(|| DiagnosticsError::UnknownId(id.as_ref().into()))?;
            out.push(self.ids[i].clone(), self.vector(i))?;
        }
        Ok(out)
    }

    fn index(&self) -> Result<BTreeMap<&str, usize>, DiagnosticsError> {
        let mut index = BTreeMap::new();
        for (i, id) in self.ids.iter().enumerate() {
            if index.insert(id.as_str(), i).is_some() {
                return Err(DiagnosticsError::DuplicateId(id.clone()));
            }
        }
        Ok(index)
    }

    fn check_nonzero(&self) -> Result<(), DiagnosticsError> {
        let bad: Vec<String> = (0..self.len())
            .filter(|&i| {
                let v = self.vector(i);
                let n = norm(v);
                n == 0.0 || !n.is_finite()
            })
            .map(|i| self.ids[i].clone())
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DiagnosticsError::ZeroVectors(bad))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

/// Subspace iterations used to find the top embedding components.
const SUBSPACE_MAX_ITERATIONS: usize = 500;
const SUBSPACE_TOLERANCE: f64 = 1e-12;
/// Below this dimension the covariance is decomposed directly.
const DIRECT_EIGEN_MAX_DIM: usize = 96;

/// Removal of dominant common directions: L2 normalisation, then projecting
/// out the top principal components of the normalised cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPostprocessor {
    pub dim: usize,
    /// `d × c`, orthonormal columns.
    pub components: Matrix,
}

impl EmbeddingPostprocessor {
    /// Learns the top `c` components from `set`. Centering is used only to
    /// find the components; [`apply`](Self::apply) projects them out of the
    /// uncentered normalised vectors.
    pub fn fit(set: &EmbeddingSet, c: usize) -> Result<Self, DiagnosticsError> {
        let d = set.dim();
        if c >= d.max(1) {
            return Err(DiagnosticsError::TooManyComponents { c, d });
        }
        set.check_nonzero()?;
        if c == 0 {
            return Ok(Self {
                dim: d,
                components: Matrix::zeros(d, 0),
            });
        }
        if set.len() < 2 {
            return Err(DiagnosticsError::TooFewRows { needed: 2, got: set.len() });
        }
        let n = set.len();
        let mut centered = Vec::with_capacity(n * d);
        for i in 0..n {
            let v = set.vector(i);
            let s = 1.0 / norm(v);
            centered.extend(v.iter().map(|x| x * s));
        }
        let mut mu = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mu.iter_mut().zip(&centered[i * d..(i + 1) * d]) {
                *m += x;
            }
        }
        for m in &mut mu {
            *m /= n as f64;
        }
        for i in 0..n {
            for (x, m) in centered[i * d..(i + 1) * d].iter_mut().zip(&mu) {
                *x -= m;
            }
        }
        let components = if d <= DIRECT_EIGEN_MAX_DIM {
            top_components_direct(&centered, n, d, c)?
        } else {
            top_components_subspace(&centered, n, d, c)?
        };
        Ok(Self { dim: d, components })
    }

    pub fn removed(&self) -> usize {
        self.components.cols()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.components.column(k)
    }

    /// Normalises, removes the components and normalises again.
    pub fn apply(&self, set: &EmbeddingSet) -> Result<EmbeddingSet, DiagnosticsError> {
        if set.dim() != self.dim {
            return Err(DiagnosticsError::DimensionMismatch {
                expected: self.dim,
                got: set.dim(),
            });
        }
        set.check_nonzero()?;
        let comps: Vec<Vec<f64>> = (0..self.removed()).map(|k| self.component(k)).collect();
        let mut out = EmbeddingSet::new(self.dim);
        let mut collapsed = Vec::new();
        let mut buf = vec![0.0; self.dim];
        for i in 0..set.len() {
            let v = set.vector(i);
            let s = 1.0 / norm(v);
            for (b, x) in buf.iter_mut().zip(v) {
                *b = x * s;
            }
            // Two passes keep the residual orthogonal to working precision.
            for _ in 0..2 {
                for u in &comps {
                    let p = dot(&buf, u);
                    for (b, x) in buf.iter_mut().zip(u) {
                        *b -= p * x;
                    }
                }
            }
            let r = norm(&buf);
            if r <= 1e-12 {
                collapsed.push(set.ids()[i].clone());
                continue;
            }
            for b in &mut buf {
                *b /= r;
            }
            out.push(set.ids()[i].clone(), &buf)?;
        }
        if !collapsed.is_empty() {
            return Err(DiagnosticsError::ZeroVectors(collapsed));
        }
        out.postprocess = Some(PostprocessRecord {
            normalized: true,
            components_removed: self.removed(),
        });
        Ok(out)
    }
}

/// Fit and apply on the same set.
pub fn postprocess_embeddings(raw: &EmbeddingSet, c: usize) -> Result<EmbeddingSet, DiagnosticsError> {
    EmbeddingPostprocessor::fit(raw, c)?.apply(raw)
}

fn top_components_direct(x: &[f64], n: usize, d: usize, c: usize) -> Result<Matrix, DiagnosticsError> {
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        for a in 0..d {
            let ra = row[a];
            for b in a..d {
                cov[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    let eig = symmetric_eigen(&cov)?;
    let mut out = Matrix::zeros(d, c);
    for r in 0..d {
        for k in 0..c {
            out[(r, k)] = eig.vectors[(r, k)];
        }
    }
    orthonormalize_columns(&mut out);
    Ok(out)
}

/// `XᵀX Q` without forming the covariance.
fn gram_times(x: &[f64], n: usize, d: usize, q: &Matrix) -> Matrix {
    let b = q.cols();
    let mut out = Matrix::zeros(d, b);
    let mut proj = vec![0.0; b];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        for (k, p) in proj.iter_mut().enumerate() {
            *p = (0..d).map(|r| row[r] * q[(r, k)]).sum();
        }
        for r in 0..d {
            let xr = row[r];
            for k in 0..b {
                out[(r, k)] += xr * proj[k];
            }
        }
    }
    out
}

fn top_components_subspace(x: &[f64], n: usize, d: usize, c: usize) -> Result<Matrix, DiagnosticsError> {
    let block = (c + 8).min(d);
    let mut q = Matrix::zeros(d, block);
    let mut state = 0x5eed_u64;
    for r in 0..d {
        for k in 0..block {
            state = splitmix64(state);
            q[(r, k)] = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
    }
    orthonormalize_columns(&mut q);
    let mut previous = vec![f64::INFINITY; c];
    let mut ritz = Matrix::zeros(d, block);
    for _ in 0..SUBSPACE_MAX_ITERATIONS {
        let z = gram_times(x, n, d, &q);
        let small = q.transpose().matmul(&z);
        let mut sym = small.clone();
        for a in 0..block {
            for b in 0..a {
                let avg = 0.5 * (small[(a, b)] + small[(b, a)]);
                sym[(a, b)] = avg;
                sym[(b, a)] = avg;
            }
        }
        let eig = symmetric_eigen(&sym)?;
        ritz = q.matmul(&eig.vectors);
        let scale = eig.values[0].abs().max(f64::MIN_POSITIVE);
        let converged = eig.values[..c]
            .iter()
            .zip(&previous)
            .all(|(v, p)| (v - p).abs() <= SUBSPACE_TOLERANCE * scale);
        previous.copy_from_slice(&eig.values[..c]);
        if converged {
            break;
        }
        q = z;
        orthonormalize_columns(&mut q);
    }
    let mut out = Matrix::zeros(d, c);
    for r in 0..d {
        for k in 0..c {
            out[(r, k)] = ritz[(r, k)];
        }
    }
    orthonormalize_columns(&mut out);
    Ok(out)
}

/// Cosine distance `1 - u·v / (‖u‖‖v‖)`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    1.0 - dot(u, v) / (norm(u) * norm(v))
}

/// The `min(sample_n, N)` members with the smallest seeded hash of their id.
/// Depends only on the id set and the seed, never on input order.
pub fn sample_indices(set: &EmbeddingSet, sample_n: usize, seed: u64) -> Vec<usize> {
    let seed_hash = fnv1a_extend(FNV_OFFSET, &seed.to_le_bytes());
    let mut keyed: Vec<(u64, &str, usize)> = set
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (splitmix64(fnv1a_extend(seed_hash, id.as_bytes())), id.as_str(), i))
        .collect();
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    keyed.truncate(sample_n);
    keyed.sort_unstable_by(|a, b| a.1.cmp(b.1));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub n_sampled: usize,
    pub n_pairs: u64,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub p05: f64,
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
    /// Counts over `[0, 2]` in [`DISTANCE_BINS`] equal bins.
    pub histogram: Vec<u64>,
}

/// Pairwise cosine distances of a seeded sample, kept as a dense matrix so
/// resampling does not recompute them.
#[derive(Debug, Clone)]
pub struct DistanceSample {
    ids: Vec<String>,
    distances: Vec<f64>,
}

impl DistanceSample {
    pub fn new(set: &EmbeddingSet, sample_n: usize, seed: u64) -> Result<Self, DiagnosticsError> {
        if set.len() < 2 || sample_n < 2 {
            return Err(DiagnosticsError::TooFewRows {
                needed: 2,
                got: set.len().min(sample_n),
            });
        }
        set.check_nonzero()?;
        let idx = sample_indices(set, sample_n, seed);
        let n = idx.len();
        let normed: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let v = set.vector(i);
                let s = 1.0 / norm(v);
                v.iter().map(|x| x * s).collect()
            })
            .collect();
        let mut distances = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let dist = 1.0 - dot(&normed[a], &normed[b]);
                distances[a * n + b] = dist;
                distances[b * n + a] = dist;
            }
        }
        Ok(Self {
            ids: idx.iter().map(|&i| set.ids()[i].clone()).collect(),
            distances,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[a * self.len() + b]
    }

    pub fn stats(&self) -> DistanceStats {
        let n = self.len();
        let mut all = Vec::with_capacity(n * (n - 1) / 2);
        for a in 0..n {
            for b in (a + 1)..n {
                all.push(self.distance(a, b));
            }
        }
        let mut histogram = vec![0u64; DISTANCE_BINS];
        for &x in &all {
            histogram[bin_index(x, 2.0, DISTANCE_BINS)] += 1;
        }
        let m = mean(&all);
        all.sort_by(f64::total_cmp);
        DistanceStats {
            n_sampled: n,
            n_pairs: all.len() as u64,
            mean: m,
            median: percentile_sorted(&all, 0.5),
            min: all[0],
            max: all[all.len() - 1],
            p05: percentile_sorted(&all, 0.05),
            p25: percentile_sorted(&all, 0.25),
            p75: percentile_sorted(&all, 0.75),
            p95: percentile_sorted(&all, 0.95),
            histogram,
        }
    }

    /// Standard error of the mean pairwise distance from `resamples`
    /// bootstrap draws of documents. Pairs of a document with a copy of
    /// itself are skipped.
    pub fn bootstrap_se(&self, resamples: usize, seed: u64) -> f64 {
        let n = self.len();
        let mut state = seed ^ 0xb007_5742_u64;
        let mut means = Vec::with_capacity(resamples);
        let mut draw = vec![0usize; n];
        for _ in 0..resamples {
            for slot in draw.iter_mut() {
                state = splitmix64(state);
                *slot = ((state as u128 * n as u128) >> 64) as usize;
            }
            let mut sum = 0.0;
            let mut count = 0u64;
            for a in 0..n {
                let row = &self.distances[draw[a] * n..(draw[a] + 1) * n];
                for &b in &draw[(a + 1)..] {
                    if b != draw[a] {
                        sum += row[b];
                        count += 1;
                    }
                }
            }
            means.push(if count == 0 { 0.0 } else { sum / count as f64 });
        }
        sqrt(crate::stats::sample_variance(&means))
    }
}

pub fn pairwise_distance_stats(set: &EmbeddingSet, sample_n: usize, seed: u64) -> Result<DistanceStats, DiagnosticsError> {
    Ok(DistanceSample::new(set, sample_n, seed)?.stats())
}

fn bin_index(x: f64, range: f64, bins: usize) -> usize {
    let b = floor(x / range * bins as f64);
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

/// Per-domain, per-component histograms of rescaled scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub n_components: usize,
    pub bins: usize,
    /// `domain -> component -> bin counts`.
    pub histograms: BTreeMap<String, Vec<Vec<u64>>>,
    /// Documents per domain.
    pub documents: BTreeMap<String, u64>,
    /// Non-finite scores, which are left out of the histograms.
    pub non_finite: u64,
}

impl DistributionReport {
    pub fn new(n_components: usize) -> Self {
        Self {
            n_components,
            bins: SCORE_BINS,
            histograms: BTreeMap::new(),
            documents: BTreeMap::new(),
            non_finite: 0,
        }
    }

    /// Adds one document. Scores beyond `[0, 5]` land in the edge bins.
    pub fn add(&mut self, domain: Option<&str>, scores: &[f64]) -> Result<(), DiagnosticsError> {
        if scores.len() != self.n_components {
            return Err(DiagnosticsError::DimensionMismatch {
                expected: self.n_components,
                got: scores.len(),
            });
        }
        let domain = domain.unwrap_or(UNKNOWN_DOMAIN);
        let (k, bins) = (self.n_components, self.bins);
        let hist = self
            .histograms
            .entry(domain.into())
            .or_insert_with(|| vec![vec![0; bins]; k]);
        for (c, &s) in scores.iter().enumerate() {
            if s.is_finite() {
                hist[c][bin_index(s, SCORE_RANGE, bins)] += 1;
            } else {
                self.non_finite += 1;
            }
        }
        *self.documents.entry(domain.into()).or_insert(0) += 1;
        Ok(())
    }

    /// Lower edge of bin `b`.
    pub fn bin_start(&self, b: usize) -> f64 {
        SCORE_RANGE * b as f64 / self.bins as f64
    }
}

/// Builds the report from `(id, scores)` pairs and an id → domain map.
pub fn score_distribution_report<'a, I>(
    n_components: usize,
    pc_scores: I,
    domains: &BTreeMap<String, String>,
) -> Result<DistributionReport, DiagnosticsError>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let mut report = DistributionReport::new(n_components);
    for (id, scores) in pc_scores {
        report.add(domains.get(id).map(String::as_str), scores)?;
    }
    Ok(report)
}
