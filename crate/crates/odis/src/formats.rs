//! On-disk formats of the fitted decomposition and the surrogate scorers.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use odis_core::decomposer::Rescale;
use odis_core::linalg::Matrix;
use odis_core::scorer::{ScorerMetrics, TrainingMeta};
use odis_core::{FeatureConfig, PcaModel, SurrogateScorer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PCA_FORMAT_VERSION: u32 = 1;
pub const SCORER_FORMAT_VERSION: u32 = 1;
pub const WEIGHTS_ENCODING: &str = "base64-f64le";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("inconsistent model file: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PcaFile {
    format_version: u32,
    dimensions: Vec<String>,
    mu: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Row-major `m × m`; column `j` is the `j+1`-th component.
    eigenvectors: Vec<f64>,
    k: usize,
    tau: Option<f64>,
    rescale: Vec<[f64; 2]>,
    standardized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<Vec<f64>>,
    explained_variance_ratio: Vec<f64>,
}

/// Pretty JSON with a trailing newline. `dimensions` names the columns.
pub fn pca_to_json(model: &PcaModel, dimensions: &[String]) -> Vec<u8> {
    let file = PcaFile {
        format_version: PCA_FORMAT_VERSION,
        dimensions: dimensions.to_vec(),
        mu: model.mu.clone(),
        eigenvalues: model.eigenvalues.clone(),
        eigenvectors: model.eigenvectors.as_slice().to_vec(),
        k: model.k,
        tau: model.tau,
        rescale: model.rescale.iter().map(|r| [r.lo, r.hi]).collect(),
        standardized: model.standardized(),
        scale: model.scale.clone(),
        explained_variance_ratio: model.explained_variance_ratio(),
    };
    pretty(&file)
}

pub fn pca_from_json(bytes: &[u8]) -> Result<(PcaModel, Vec<String>), FormatError> {
    let f: PcaFile = serde_json::from_slice(bytes)?;
    if f.format_version != PCA_FORMAT_VERSION {
        return Err(FormatError::Version {
            found: f.format_version,
            expected: PCA_FORMAT_VERSION,
        });
    }
    let m = f.mu.len();
    let bad = |msg: &str| Err(FormatError::Inconsistent(msg.into()));
    if f.eigenvalues.len() != m || f.eigenvectors.len() != m * m {
        return bad("eigen arrays do not match the mean's dimension");
    }
    if f.k == 0 || f.k > m || f.rescale.len() != f.k {
        return bad("k and rescale entries disagree");
    }
    if f.standardized != f.scale.is_some() || f.scale.as_ref().is_some_and(|s| s.len() != m) {
        return bad("standardisation flag and scale vector disagree");
    }
    if !f.dimensions.is_empty() && f.dimensions.len() != m {
        return bad("dimension names do not match the mean's dimension");
    }
    let model = PcaModel {
        mu: f.mu,
        scale: f.scale,
        eigenvalues: f.eigenvalues,
        eigenvectors: Matrix::from_row_major(m, m, f.eigenvectors),
        k: f.k,
        tau: f.tau,
        rescale: f.rescale.iter().map(|r| Rescale { lo: r[0], hi: r[1] }).collect(),
    };
    Ok((model, f.dimensions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScorerFile {
    format_version: u32,
    /// 1-based component number.
    pc: usize,
    lambda: f64,
    n_buckets: u32,
    ngram_min: usize,
    ngram_max: usize,
    bias: f64,
    reference_fingerprint: String,
    n_train: usize,
    cg_iterations: usize,
    train_rmse: f64,
    holdout: Option<ScorerMetrics>,
    weights_encoding: String,
    weights: String,
}

pub fn scorer_to_json(scorer: &SurrogateScorer, holdout: Option<ScorerMetrics>) -> Vec<u8> {
    let mut raw = Vec::with_capacity(scorer.weights.len() * 8);
    for w in &scorer.weights {
        raw.extend_from_slice(&w.to_le_bytes());
    }
    let meta = &scorer.meta;
    let file = ScorerFile {
        format_version: SCORER_FORMAT_VERSION,
        pc: scorer.pc_index + 1,
        lambda: meta.lambda,
        n_buckets: meta.features.n_buckets,
        ngram_min: meta.features.ngram_min,
        ngram_max: meta.features.ngram_max,
        bias: scorer.bias,
        reference_fingerprint: format!("{:016x}", meta.reference_fingerprint),
        n_train: meta.n_train,
        cg_iterations: meta.cg_iterations,
        train_rmse: meta.train_rmse,
        holdout,
        weights_encoding: WEIGHTS_ENCODING.into(),
        weights: STANDARD.encode(raw),
    };
    pretty(&file)
}

pub fn scorer_from_json(bytes: &[u8]) -> Result<(SurrogateScorer, Option<ScorerMetrics>), FormatError> {
    let f: ScorerFile = serde_json::from_slice(bytes)?;
    if f.format_version != SCORER_FORMAT_VERSION {
        return Err(FormatError::Version {
            found: f.format_version,
            expected: SCORER_FORMAT_VERSION,
        });
    }
    if f.weights_encoding != WEIGHTS_ENCODING {
        return Err(FormatError::Inconsistent(format!(
            "unknown weight encoding {:?}",
            f.weights_encoding
        )));
    }
    let raw = STANDARD
        .decode(f.weights.as_bytes())
        .map_err(|e| FormatError::Inconsistent(format!("weights: {e}")))?;
    if raw.len() != f.n_buckets as usize * 8 || f.pc == 0 {
        return Err(FormatError::Inconsistent("weight array does not match n_buckets".into()));
    }
    let weights = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let fingerprint = u64::from_str_radix(&f.reference_fingerprint, 16)
        .map_err(|e| FormatError::Inconsistent(format!("fingerprint: {e}")))?;
    let scorer = SurrogateScorer {
        pc_index: f.pc - 1,
        weights,
        bias: f.bias,
        meta: TrainingMeta {
            lambda: f.lambda,
            features: FeatureConfig {
                n_buckets: f.n_buckets,
                ngram_min: f.ngram_min,
                ngram_max: f.ngram_max,
            },
            reference_fingerprint: fingerprint,
            n_train: f.n_train,
            cg_iterations: f.cg_iterations,
            train_rmse: f.train_rmse,
        },
    };
    Ok((scorer, f.holdout))
}

/// Pretty-printed JSON with a trailing newline.
pub fn pretty<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory JSON serialisation");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use odis_core::PcaOptions;

    fn model() -> PcaModel {
        let x = Matrix::from_rows(&[
            [1.0, 2.0, 0.5],
            [3.0, 4.1, 0.0],
            [5.0, 6.0, 1.0 / 3.0],
            [0.7, 2.2, 2.0],
        ]);
        PcaModel::fit(&x, PcaOptions { k: Some(2), ..PcaOptions::default() }).unwrap()
    }

    #[test]
    fn pca_round_trip_is_exact() {
        let m = model();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let bytes = pca_to_json(&m, &names);
        let (back, dims) = pca_from_json(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(dims, names);
        assert_eq!(pca_to_json(&back, &dims), bytes);
    }

    #[test]
    fn pca_rejects_other_versions_and_shapes() {
        let bytes = pca_to_json(&model(), &[]);
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["format_version"] = 9.into();
        assert!(matches!(
            pca_from_json(&serde_json::to_vec(&v).unwrap()),
            Err(FormatError::Version { found: 9, .. })
        ));
        v["format_version"] = 1.into();
        v["k"] = 3.into();
        assert!(matches!(
            pca_from_json(&serde_json::to_vec(&v).unwrap()),
            Err(FormatError::Inconsistent(_))
        ));
    }

    #[test]
    fn scorer_round_trip_is_exact() {
        let pairs = [("alpha beta gamma", 1.25), ("delta epsilon", 4.0), ("alpha zeta", 2.0)];
        let cfg = FeatureConfig {
            n_buckets: 1 << 10,
            ..FeatureConfig::default()
        };
        let s = SurrogateScorer::fit(&pairs, 0.3, 2, cfg).unwrap();
        let metrics = ScorerMetrics {
            n: 3,
            rmse: 0.1,
            pearson: Some(0.9),
            spearman: None,
        };
        let bytes = scorer_to_json(&s, Some(metrics));
        let (back, m) = scorer_from_json(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(m, Some(metrics));
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["pc"], 3);
    }
}
