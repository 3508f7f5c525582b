//! Surrogate component scorers: hashed character n-grams and ridge
//! regression.
//!
//! A scorer maps raw text to a predicted `[0, 5]` score for one principal
//! component. Text is lowercased and whitespace-collapsed, every character
//! n-gram (`n = 3..=5` by default) is hashed with FNV-1a into one of `F`
//! buckets with a sign taken from the top hash bit, counts are accumulated
//! and the vector is L2-normalised. Weights are fitted by conjugate gradient
//! on the ridge normal equations with an unpenalised bias.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::SCORE_MAX;
use crate::math::{clamp, fnv1a, fnv1a_extend, sqrt, FNV_OFFSET};
use crate::stats::{pearson, rmse, spearman};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("need at least 2 training pairs, got {0}")]
    TooFewPairs(usize),
    #[error("target {index} is not finite")]
    NonFiniteTarget { index: usize },
    #[error("{features} feature vectors but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
    #[error("ridge strength must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("holdout has {0} pairs; correlations need at least 2")]
    HoldoutTooSmall(usize),
    #[error("feature index {index} outside {n_buckets} buckets")]
    BadFeatureIndex { index: u32, n_buckets: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_buckets: u32,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_buckets: 1 << 18,
            ngram_min: 3,
            ngram_max: 5,
        }
    }
}

/// Sparse feature vector, entries sorted by bucket index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Builds a vector from `(index, weight)` pairs, summing duplicates. The
    /// weights are used as given, without normalisation.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, w) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => entries.push((i, w)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.entries.iter().map(|(_, w)| w * w).sum())
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * dense[i as usize]).sum()
    }
}

fn normalize_text(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for (i, word) in lower.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Hashed, signed, L2-normalised character n-gram counts. Non-empty text
/// shorter than the smallest n-gram is hashed as one gram so it still maps
/// to a unit vector.
pub fn featurize(text: &str, config: &FeatureConfig) -> FeatureVector {
    let norm_text = normalize_text(text);
    if norm_text.is_empty() {
        return FeatureVector::default();
    }
    let offsets: Vec<usize> = norm_text
        .char_indices()
        .map(|(i, _)| i)
        .chain(core::iter::once(norm_text.len()))
        .collect();
    let n_chars = offsets.len() - 1;
    let buckets = u64::from(config.n_buckets.max(1));
    let mut raw: Vec<(u32, f64)> = Vec::new();
    let mut push = |bytes: &[u8]| {
        let h = fnv1a(bytes);
        let idx = (h % buckets) as u32;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        raw.push((idx, sign));
    };
    if n_chars < config.ngram_min {
        push(norm_text.as_bytes());
    } else {
        for n in config.ngram_min..=config.ngram_max {
            if n > n_chars {
                break;
            }
            for start in 0..=(n_chars - n) {
                push(&norm_text.as_bytes()[offsets[start]..offsets[start + n]]);
            }
        }
    }
    let mut v = FeatureVector::from_pairs(raw);
    let norm = v.norm();
    if norm > 0.0 {
        for e in &mut v.entries {
            e.1 /= norm;
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions {
    pub lambda: f64,
    pub fit_intercept: bool,
    /// Relative residual `‖b - Aw‖ / ‖b‖` at which CG stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            fit_intercept: true,
            tolerance: 1e-8,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// Dense weights over all `n_buckets` features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    pub train_rmse: f64,
}

/// Minimises `Σ(wᵀφ + b - y)² + λ‖w‖²` with `b` unpenalised.
///
/// Only buckets that occur in the training data can receive weight (the
/// gradient of every other coordinate is zero from the zero start), so CG
/// runs in that compressed coordinate space.
pub fn fit_ridge(
    features: &[FeatureVector],
    targets: &[f64],
    n_buckets: u32,
    options: RidgeOptions,
) -> Result<RidgeFit, ScorerError> {
    let n = features.len();
    if n != targets.len() {
        return Err(ScorerError::LengthMismatch {
            features: n,
            targets: targets.len(),
        });
    }
    if n < 2 {
        return Err(ScorerError::TooFewPairs(n));
    }
    if let Some(index) = targets.iter().position(|t| !t.is_finite()) {
        return Err(ScorerError::NonFiniteTarget { index });
    }
    if !(options.lambda.is_finite() && options.lambda >= 0.0) {
        return Err(ScorerError::BadLambda(options.lambda));
    }

    // Compress used buckets to 0..d.
    let mut used: Vec<u32> = Vec::new();
    for f in features {
        for &(i, _) in f.entries() {
            if i >= n_buckets {
                return Err(ScorerError::BadFeatureIndex { index: i, n_buckets });
            }
            used.push(i);
        }
    }
    used.sort_unstable();
    used.dedup();
    let d = used.len();
    let rows: Vec<Vec<(usize, f64)>> = features
        .iter()
        .map(|f| {
            f.entries()
                .iter()
                .map(|&(i, w)| (used.binary_search(&i).expect("collected above"), w))
                .collect()
        })
        .collect();

    let (feature_mean, target_mean) = if options.fit_intercept {
        let mut fm = vec![0.0; d];
        for row in &rows {
            for &(j, w) in row {
                fm[j] += w;
            }
        }
        fm.iter_mut().for_each(|x| *x /= n as f64);
        (fm, targets.iter().sum::<f64>() / n as f64)
    } else {
        (vec![0.0; d], 0.0)
    };

    let row_dot = |row: &[(usize, f64)], w: &[f64]| -> f64 { row.iter().map(|&(j, x)| x * w[j]).sum() };
    let dense_dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    // Φcᵀ u for a length-n vector u, where Φc has the feature mean removed.
    let apply_t = |u: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut usum = 0.0;
        for (row, &ui) in rows.iter().zip(u) {
            usum += ui;
            for &(j, x) in row {
                out[j] += x * ui;
            }
        }
        if options.fit_intercept {
            for (o, m) in out.iter_mut().zip(&feature_mean) {
                *o -= m * usum;
            }
        }
    };
    // A w = Φcᵀ Φc w + λ w
    let mut u = vec![0.0; n];
    let mut apply_a = |w: &[f64], out: &mut [f64]| {
        let shift = if options.fit_intercept { dense_dot(&feature_mean, w) } else { 0.0 };
        for (ui, row) in u.iter_mut().zip(&rows) {
            *ui = row_dot(row, w) - shift;
        }
        apply_t(&u, out);
        for (o, x) in out.iter_mut().zip(w) {
            *o += options.lambda * x;
        }
    };

    let centered_targets: Vec<f64> = targets.iter().map(|t| t - target_mean).collect();
    let mut b = vec![0.0; d];
    apply_t(&centered_targets, &mut b);
    let b_norm = sqrt(dense_dot(&b, &b));
    // Targets constant up to rounding carry nothing to fit.
    let signal_floor = 1e-12 * sqrt(targets.iter().map(|t| t * t).sum::<f64>()).max(1.0);

    let mut w = vec![0.0; d];
    let mut iterations = 0;
    let mut relative_residual = 0.0;
    if b_norm > signal_floor {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; d];
        let mut rs = dense_dot(&r, &r);
        while iterations < options.max_iterations {
            apply_a(&p, &mut ap);
            let pap = dense_dot(&p, &ap);
            if pap.is_nan() || pap <= 0.0 {
                break;
            }
            let alpha = rs / pap;
            for ((wi, pi), (ri, api)) in w.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
                *wi += alpha * pi;
                *ri -= alpha * api;
            }
            iterations += 1;
            let rs_new = dense_dot(&r, &r);
            relative_residual = sqrt(rs_new) / b_norm;
            if relative_residual <= options.tolerance {
                break;
            }
            let beta = rs_new / rs;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
            rs = rs_new;
        }
    }

    let bias = if options.fit_intercept {
        target_mean - dense_dot(&feature_mean, &w)
    } else {
        0.0
    };
    let mut weights = vec![0.0; n_buckets as usize];
    for (j, &bucket) in used.iter().enumerate() {
        weights[bucket as usize] = w[j];
    }
    let predictions: Vec<f64> = rows.iter().map(|row| row_dot(row, &w) + bias).collect();
    let train_rmse = rmse(&predictions, targets);
    Ok(RidgeFit {
        weights,
        bias,
        iterations,
        relative_residual,
        train_rmse,
    })
}

/// Anything that can score text for one component.
pub trait PcScorer {
    /// Zero-based component index.
    fn pc_index(&self) -> usize;
    /// Predicted score in `[0, 5]`.
    fn score_text(&self, text: &str) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lambda: f64,
    pub features: FeatureConfig,
    /// FNV-1a over the training texts and target bits.
    pub reference_fingerprint: u64,
    pub n_train: usize,
    pub cg_iterations: usize,
    pub train_rmse: f64,
}

/// Ridge scorer for one principal component.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateScorer {
    pub pc_index: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

pub fn training_fingerprint<S: AsRef<str>>(pairs: &[(S, f64)]) -> u64 {
    let mut h = FNV_OFFSET;
    for (text, target) in pairs {
        h = fnv1a_extend(h, text.as_ref().as_bytes());
        h = fnv1a_extend(h, &[0xff]);
        h = fnv1a_extend(h, &target.to_bits().to_le_bytes());
    }
    h
}

impl SurrogateScorer {
    /// Fits a scorer from `(text, target)` pairs.
    pub fn fit<S: AsRef<str>>(
        pairs: &[(S, f64)],
        lambda: f64,
        pc_index: usize,
        config: FeatureConfig,
    ) -> Result<Self, ScorerError> {
        let features: Vec<FeatureVector> = pairs.iter().map(|(t, _)| featurize(t.as_ref(), &config)).collect();
        let targets: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        Self::fit_featurized(&features, &targets, training_fingerprint(pairs), lambda, pc_index, config)
    }

    /// [`fit`](Self::fit) for texts already featurized with `config`;
    /// `fingerprint` identifies the training pairs.
    pub fn fit_featurized(
        features: &[FeatureVector],
        targets: &[f64],
        fingerprint: u64,
        lambda: f64,
        pc_index: usize,
        config: FeatureConfig,
    ) -> Result<Self, ScorerError> {
        let options = RidgeOptions {
            lambda,
            ..Default::default()
        };
        let fit = fit_ridge(features, targets, config.n_buckets, options)?;
        Ok(Self {
            pc_index,
            weights: fit.weights,
            bias: fit.bias,
            meta: TrainingMeta {
                lambda,
                features: config,
                reference_fingerprint: fingerprint,
                n_train: features.len(),
                cg_iterations: fit.iterations,
                train_rmse: fit.train_rmse,
            },
        })
    }

    /// Unclipped linear response.
    pub fn raw_score(&self, features: &FeatureVector) -> f64 {
        features.dot_dense(&self.weights) + self.bias
    }

    pub fn score_features(&self, features: &FeatureVector) -> f64 {
        clamp(self.raw_score(features), 0.0, SCORE_MAX)
    }

    pub fn predict<'a, I>(&'a self, docs: I) -> impl Iterator<Item = (&'a str, f64)> + 'a
    where
        I: IntoIterator<Item = &'a crate::model::Document> + 'a,
    {
        docs.into_iter().map(move |d| (d.id.as_str(), self.score_text(&d.text)))
    }
}

impl PcScorer for SurrogateScorer {
    fn pc_index(&self) -> usize {
        self.pc_index
    }

    fn score_text(&self, text: &str) -> f64 {
        self.score_features(&featurize(text, &self.meta.features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerMetrics {
    pub n: usize,
    pub rmse: f64,
    /// `None` when either series is constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn regression_metrics(predicted: &[f64], actual: &[f64]) -> Result<ScorerMetrics, ScorerError> {
    if predicted.len() < 2 {
        return Err(ScorerError::HoldoutTooSmall(predicted.len()));
    }
    Ok(ScorerMetrics {
        n: predicted.len(),
        rmse: rmse(predicted, actual),
        pearson: pearson(predicted, actual),
        spearman: spearman(predicted, actual),
    })
}

pub fn evaluate_scorer<S: PcScorer + ?Sized, T: AsRef<str>>(
    scorer: &S,
    holdout: &[(T, f64)],
) -> Result<ScorerMetrics, ScorerError> {
    let predicted: Vec<f64> = holdout.iter().map(|(t, _)| scorer.score_text(t.as_ref())).collect();
    let actual: Vec<f64> = holdout.iter().map(|p| p.1).collect();
    regression_metrics(&predicted, &actual)
}

/// Ridge strengths tried by [`tune_lambda`]: `10^-3 ..= 10^3`.
pub const LAMBDA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

/// Picks the grid value with the lowest holdout RMSE of clipped
/// predictions; the smaller λ wins ties.
pub fn tune_lambda(
    train: &[(FeatureVector, f64)],
    holdout: &[(FeatureVector, f64)],
    n_buckets: u32,
    grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>), ScorerError> {
    let feats: Vec<FeatureVector> = train.iter().map(|p| p.0.clone()).collect();
    let targets: Vec<f64> = train.iter().map(|p| p.1).collect();
    let actual: Vec<f64> = holdout.iter().map(|p| p.1).collect();
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let fit = fit_ridge(&feats, &targets, n_buckets, RidgeOptions { lambda, ..Default::default() })?;
        let pred: Vec<f64> = holdout
            .iter()
            .map(|(f, _)| clamp(f.dot_dense(&fit.weights) + fit.bias, 0.0, SCORE_MAX))
            .collect();
        let err = rmse(&pred, &actual);
        table.push((lambda, err));
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((lambda, err));
        }
    }
    Ok((best.map_or(1.0, |b| b.0), table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(i: u32, w: f64) -> FeatureVector {
        FeatureVector::from_pairs(vec![(i, w)])
    }

    #[test]
    fn empty_text_is_zero_vector() {
        assert!(featurize("", &FeatureConfig::default()).is_empty());
        assert!(featurize("   \n\t", &FeatureConfig::default()).is_empty());
    }

    #[test]
    fn abc_is_one_gram() {
        let cfg = FeatureConfig {
            n_buckets: u32::MAX,
            ngram_min: 3,
            ngram_max: 3,
        };
        let v = featurize("abc", &cfg);
        assert_eq!(v.entries().len(), 1);
        let h = fnv1a(b"abc");
        assert_eq!(v.entries()[0].0 as u64, h % u64::from(u32::MAX));
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        assert_eq!(v.entries()[0].1, sign);
    }

    #[test]
    fn normalisation_lowercases_and_collapses_whitespace() {
        let cfg = FeatureConfig::default();
        assert_eq!(featurize("Hello   World", &cfg), featurize("hello world", &cfg));
        assert_eq!(featurize(" hello\n world ", &cfg), featurize("hello world", &cfg));
    }

    #[test]
    fn short_text_still_has_unit_norm() {
        let v = featurize("ab", &FeatureConfig::default());
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_least_squares() {
        let feats = vec![single(0, 1.0), single(0, 2.0), single(0, 3.0)];
        let fit = fit_ridge(
            &feats,
            &[2.0, 4.0, 6.0],
            4,
            RidgeOptions {
                lambda: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((fit.weights[0] - 2.0).abs() < 1e-12);
        assert!(fit.bias.abs() < 1e-12);
    }

    #[test]
    fn closed_form_without_bias() {
        let feats = vec![single(0, 1.0), FeatureVector::default()];
        let fit = fit_ridge(
            &feats,
            &[1.0, 0.0],
            2,
            RidgeOptions {
                lambda: 1.0,
                fit_intercept: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((fit.weights[0] - 0.5).abs() < 1e-12);
        assert_eq!(fit.bias, 0.0);
    }

    #[test]
    fn constant_targets_give_bias_only_model() {
        let pairs = [("alpha beta", 3.2), ("gamma delta", 3.2), ("epsilon", 3.2)];
        let s = SurrogateScorer::fit(&pairs, 1.0, 0, FeatureConfig::default()).unwrap();
        assert!(s.weights.iter().all(|w| *w == 0.0));
        assert!((s.bias - 3.2).abs() < 1e-12);
        assert!((s.score_text("anything at all") - 3.2).abs() < 1e-12);
    }

    #[test]
    fn identical_features_give_bias_only_model() {
        let pairs = [("same text", 1.0), ("same text", 2.0), ("same text", 4.5)];
        let s = SurrogateScorer::fit(&pairs, 0.0, 0, FeatureConfig::default()).unwrap();
        assert!(s.weights.iter().all(|w| *w == 0.0));
        assert!((s.bias - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_text_predicts_clipped_bias() {
        let pairs = [("low low low", 0.5), ("high high high", 4.5)];
        let s = SurrogateScorer::fit(&pairs, 1.0, 0, FeatureConfig::default()).unwrap();
        assert_eq!(s.score_text(""), clamp(s.bias, 0.0, 5.0));
    }

    #[test]
    fn input_validation() {
        let cfg = FeatureConfig::default();
        assert_eq!(
            SurrogateScorer::fit(&[("a", 1.0)], 1.0, 0, cfg).unwrap_err(),
            ScorerError::TooFewPairs(1)
        );
        assert_eq!(
            SurrogateScorer::fit(&[("a", 1.0), ("b", f64::NAN)], 1.0, 0, cfg).unwrap_err(),
            ScorerError::NonFiniteTarget { index: 1 }
        );
        assert!(matches!(
            SurrogateScorer::fit(&[("a", 1.0), ("b", 2.0)], -1.0, 0, cfg),
            Err(ScorerError::BadLambda(_))
        ));
    }

    #[test]
    fn metrics_definitions() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-15);
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.75).collect();
        let m = regression_metrics(&shifted, &y).unwrap();
        assert!((m.rmse - 0.75).abs() < 1e-15);
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let m = regression_metrics(&neg, &y).unwrap();
        assert!((m.pearson.unwrap() + 1.0).abs() < 1e-15);
        assert!((m.spearman.unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            regression_metrics(&[1.0], &[1.0]).unwrap_err(),
            ScorerError::HoldoutTooSmall(1)
        );
    }

    fn random_pairs(seed: u64, n: usize) -> Vec<(String, f64)> {
        let words = ["data", "model", "proof", "recipe", "market", "river", "quantum", "story"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(3..12);
                let text: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
                let text = text.join(" ");
                let target = text.matches("quantum").count() as f64 * 0.5 + 1.0;
                (text, target.min(5.0))
            })
            .collect()
    }

    #[test]
    fn ridge_monotone_in_lambda() {
        let pairs = random_pairs(1, 60);
        let cfg = FeatureConfig::default();
        let mut prev = f64::INFINITY;
        for lambda in [1e-3, 1e-1, 1.0, 10.0, 100.0] {
            let s = SurrogateScorer::fit(&pairs, lambda, 0, cfg).unwrap();
            let norm = sqrt(s.weights.iter().map(|w| w * w).sum());
            assert!(norm <= prev + 1e-9, "lambda {lambda}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let pairs = random_pairs(2, 40);
        let a = SurrogateScorer::fit(&pairs, 0.5, 1, FeatureConfig::default()).unwrap();
        let b = SurrogateScorer::fit(&pairs, 0.5, 1, FeatureConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tune_picks_a_grid_value() {
        let pairs = random_pairs(3, 80);
        let cfg = FeatureConfig::default();
        let feats: Vec<(FeatureVector, f64)> = pairs.iter().map(|(t, y)| (featurize(t, &cfg), *y)).collect();
        let (best, table) = tune_lambda(&feats[..60], &feats[60..], cfg.n_buckets, &LAMBDA_GRID).unwrap();
        assert_eq!(table.len(), 7);
        assert!(LAMBDA_GRID.contains(&best));
        let best_err = table.iter().find(|r| r.0 == best).unwrap().1;
        assert!(table.iter().all(|r| r.1 >= best_err));
    }

    #[test]
    fn exact_linear_targets_are_recovered_without_regularisation() {
        let cfg = FeatureConfig::default();
        let pairs = random_pairs(5, 60);
        let feats: Vec<FeatureVector> = pairs.iter().map(|(t, _)| featurize(t, &cfg)).collect();
        let mut truth = vec![0.0; cfg.n_buckets as usize];
        let mut state = 17u64;
        for f in &feats {
            for &(i, _) in f.entries() {
                state = crate::math::splitmix64(state);
                truth[i as usize] = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
        }
        let targets: Vec<f64> = feats.iter().map(|f| f.dot_dense(&truth) + 1.5).collect();
        let fit = fit_ridge(
            &feats,
            &targets,
            cfg.n_buckets,
            RidgeOptions {
                lambda: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.train_rmse <= 1e-6, "rmse {}", fit.train_rmse);
    }

    proptest::proptest! {
        #[test]
        fn features_are_unit_norm(text in "\\PC{1,80}") {
            let v = featurize(&text, &FeatureConfig::default());
            if !text.trim().is_empty() {
                proptest::prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            }
            proptest::prop_assert!(v.entries().iter().all(|e| e.0 < (1 << 18)));
        }

        #[test]
        fn predictions_stay_in_range(text in "[a-z ]{0,60}") {
            let pairs = random_pairs(4, 30);
            let s = SurrogateScorer::fit(&pairs, 0.01, 0, FeatureConfig::default()).unwrap();
            let p = s.score_text(&text);
            proptest::prop_assert!((0.0..=5.0).contains(&p));
        }
    }
}
