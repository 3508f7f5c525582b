//! Pipeline configuration: one TOML file with flat dotted keys such as
//! `pca.tau = 0.9`, overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use odis_core::{BudgetStrategy, FeatureConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::labeling::LabelPolicy;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Labeled reference corpus (texts).
    pub reference: Option<PathBuf>,
    /// Raw dimension scores of the reference corpus; defaults to the
    /// output of the `label` stage.
    pub reference_scores: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub model: String,
    /// Environment variable holding the chat-completions URL.
    pub endpoint_env: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        let p = LabelPolicy::default();
        Self {
            model: p.model,
            endpoint_env: "ODIS_API_ENDPOINT".into(),
            api_key_env: "ODIS_API_KEY".into(),
            temperature: 0.0,
            max_attempts: p.max_attempts,
            backoff_base_ms: p.backoff_base_ms,
            concurrency: p.concurrency,
            timeout_secs: 60,
        }
    }
}

impl LabelingConfig {
    pub fn policy(&self) -> LabelPolicy {
        LabelPolicy {
            model: self.model.clone(),
            max_attempts: self.max_attempts,
            backoff_base_ms: self.backoff_base_ms,
            concurrency: self.concurrency,
            ..LabelPolicy::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub tau: f64,
    /// Fixed component count; `tau` is ignored when set.
    pub k: Option<usize>,
    pub standardize: bool,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            tau: 0.9,
            k: Some(4),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub lambda: f64,
    pub n_buckets: u32,
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Fraction of the reference set held out for evaluation.
    pub holdout: f64,
    /// Pick λ from the grid by holdout RMSE.
    pub tune: bool,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        let f = FeatureConfig::default();
        Self {
            lambda: 1.0,
            n_buckets: f.n_buckets,
            ngram_min: f.ngram_min,
            ngram_max: f.ngram_max,
            holdout: 0.1,
            tune: false,
        }
    }
}

impl ScorerConfig {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            n_buckets: self.n_buckets,
            ngram_min: self.ngram_min,
            ngram_max: self.ngram_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Total token budget.
    pub budget_tokens: Option<u64>,
    /// Budget as a fraction of target tokens, used when `budget_tokens` is
    /// not set.
    pub budget_fraction: Option<f64>,
    pub strategy: BudgetStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            budget_tokens: None,
            budget_fraction: None,
            strategy: BudgetStrategy::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub sample_n: usize,
    pub seed: u64,
    pub components_removed: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            sample_n: 1000,
            seed: 0,
            components_removed: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub labeling: LabelingConfig,
    pub pca: PcaConfig,
    pub scorer: ScorerConfig,
    pub selection: SelectionConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid configuration")?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`. Relative paths inside the file are
    /// taken relative to the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.reference,
            &mut cfg.paths.reference_scores,
            &mut cfg.paths.target,
            &mut cfg.paths.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pca.tau > 0.0 && self.pca.tau <= 1.0) {
            bail!("pca.tau must lie in (0, 1], got {}", self.pca.tau);
        }
        if self.pca.k == Some(0) {
            bail!("pca.k must be positive");
        }
        if self.selection.budget_tokens == Some(0) {
            bail!("selection.budget_tokens must be positive");
        }
        if let Some(f) = self.selection.budget_fraction {
            if !(f > 0.0 && f <= 1.0) {
                bail!("selection.budget_fraction must lie in (0, 1], got {f}");
            }
        }
        if !(self.scorer.holdout >= 0.0 && self.scorer.holdout < 1.0) {
            bail!("scorer.holdout must lie in [0, 1), got {}", self.scorer.holdout);
        }
        if !(self.scorer.lambda >= 0.0 && self.scorer.lambda.is_finite()) {
            bail!("scorer.lambda must be a finite non-negative number");
        }
        if self.scorer.ngram_min == 0 || self.scorer.ngram_min > self.scorer.ngram_max || self.scorer.n_buckets == 0 {
            bail!("scorer n-gram range or bucket count is invalid");
        }
        if self.diagnostics.sample_n < 2 {
            bail!("diagnostics.sample_n must be at least 2");
        }
        Ok(())
    }

    /// Fingerprint of every setting that shapes artifacts. Input locations
    /// are left out because manifests fingerprint input contents instead.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.paths = PathsConfig::default();
        let bytes = serde_json::to_vec(&view).expect("config serialises");
        hex(&Sha256::digest(bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_fill_sections() {
        let cfg = PipelineConfig::from_toml(
            "pca.tau = 0.8\npca.k = 3\nselection.budget_tokens = 5000\nselection.strategy = \"variance_proportional\"\n",
        )
        .unwrap();
        assert_eq!(cfg.pca.tau, 0.8);
        assert_eq!(cfg.pca.k, Some(3));
        assert_eq!(cfg.selection.strategy, BudgetStrategy::VarianceProportional);
        assert_eq!(cfg.scorer, ScorerConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("pca.tua = 0.8").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        cfg.pca.tau = 0.0;
        assert!(cfg.validate().is_err());
        cfg.pca.tau = 0.9;
        cfg.selection.budget_tokens = Some(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.target = Some("elsewhere.jsonl".into());
        assert_eq!(a.hash(), b.hash());
        b.scorer.lambda = 2.0;
        assert_ne!(a.hash(), b.hash());
    }
}
