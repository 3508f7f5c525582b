//! Corpus records, the quality-dimension registry and the raw score matrix.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("score vector for {doc_id} has {got} values, expected {expected}")]
    LengthMismatch {
        doc_id: String,
        got: usize,
        expected: usize,
    },
    #[error("score {value} for {doc_id} on {dimension} is outside [0, {scale_max}]")]
    ScoreOutOfRange {
        doc_id: String,
        dimension: String,
        value: f64,
        scale_max: u8,
    },
    #[error("score for {doc_id} on {dimension} is not a number")]
    NotANumber { doc_id: String, dimension: String },
    #[error("dimension {name} has scale maximum {scale_max}, expected 3, 4 or 5")]
    BadScale { name: String, scale_max: u8 },
    #[error("duplicate dimension name {0}")]
    DuplicateDimension(String),
    #[error("document {0} has empty text")]
    EmptyText(String),
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub token_count: u64,
    #[serde(rename = "domain", default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, token_count: u64) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            token_count,
            domain_tag: None,
        }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain_tag = Some(domain.into());
        self
    }

    /// Domain used for per-domain reports; untagged documents group under
    /// `"unknown"`.
    pub fn domain_or_unknown(&self) -> &str {
        self.domain_tag.as_deref().unwrap_or("unknown")
    }

    pub fn ensure_scorable(&self) -> Result<(), ModelError> {
        if self.text.is_empty() {
            return Err(ModelError::EmptyText(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionCategory {
    LanguageQuality,
    KnowledgeQuality,
    ComprehensionDifficulty,
    InformationQuality,
}

/// A quality dimension the labeler asks the LLM to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub name: String,
    pub category: DimensionCategory,
    pub scale_max: u8,
    /// Literal the reply must contain right before the score.
    pub score_tag: String,
}

impl DimensionSpec {
    pub fn new(
        name: impl Into<String>,
        category: DimensionCategory,
        scale_max: u8,
        score_tag: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            category,
            scale_max,
            score_tag: score_tag.into(),
        }
    }
}

/// The eleven dimensions in registry order. Scale maxima and score tags
/// are the ones the labeling prompts ask for.
pub fn default_dimension_registry() -> Vec<DimensionSpec> {
    use DimensionCategory::*;
    [
        ("coherence", LanguageQuality, 4, "Language Coherence Score:"),
        ("conciseness", LanguageQuality, 4, "Language Conciseness Score:"),
        ("spelling accuracy", LanguageQuality, 4, "Language Spelling Accuracy Score:"),
        ("knowledge depth", KnowledgeQuality, 5, "Knowledge Depth Score:"),
        ("knowledge richness", KnowledgeQuality, 4, "Knowledge Richness Score:"),
        ("reasoning", KnowledgeQuality, 5, "Knowledge Reasoning Score:"),
        ("educational value", KnowledgeQuality, 3, "Educational score:"),
        (
            "practical helpfulness",
            KnowledgeQuality,
            4,
            "Knowledge Practical Helpfulness Score:",
        ),
        (
            "comprehension difficulty",
            ComprehensionDifficulty,
            5,
            "Comprehension Difficulty Score:",
        ),
        ("factual accuracy", InformationQuality, 3, "Information Factual Accuracy Score:"),
        ("completeness", InformationQuality, 4, "Information Completeness Score:"),
    ]
    .into_iter()
    .map(|(name, category, scale_max, tag)| DimensionSpec::new(name, category, scale_max, tag))
    .collect()
}

/// Checks scale maxima and name uniqueness of a dimension set.
pub fn validate_dimensions(dims: &[DimensionSpec]) -> Result<(), ModelError> {
    let mut seen = BTreeMap::new();
    for d in dims {
        if !(3..=5).contains(&d.scale_max) {
            return Err(ModelError::BadScale {
                name: d.name.clone(),
                scale_max: d.scale_max,
            });
        }
        if seen.insert(d.name.as_str(), ()).is_some() {
            return Err(ModelError::DuplicateDimension(d.name.clone()));
        }
    }
    Ok(())
}

/// Raw LLM scores of one document, in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    #[serde(rename = "id")]
    pub doc_id: String,
    #[serde(rename = "scores")]
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(doc_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            doc_id: doc_id.into(),
            values,
        }
    }

    pub fn validate(&self, dims: &[DimensionSpec]) -> Result<(), ModelError> {
        if self.values.len() != dims.len() {
            return Err(ModelError::LengthMismatch {
                doc_id: self.doc_id.clone(),
                got: self.values.len(),
                expected: dims.len(),
            });
        }
        for (&v, d) in self.values.iter().zip(dims) {
            if v.is_nan() {
                return Err(ModelError::NotANumber {
                    doc_id: self.doc_id.clone(),
                    dimension: d.name.clone(),
                });
            }
            if !(0.0..=f64::from(d.scale_max)).contains(&v) {
                return Err(ModelError::ScoreOutOfRange {
                    doc_id: self.doc_id.clone(),
                    dimension: d.name.clone(),
                    value: v,
                    scale_max: d.scale_max,
                });
            }
        }
        Ok(())
    }
}

/// The N×m raw score matrix of a labeled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    dims: Vec<DimensionSpec>,
    rows: Vec<ScoreVector>,
}

impl ScoreMatrix {
    pub fn new(dims: Vec<DimensionSpec>, rows: Vec<ScoreVector>) -> Result<Self, ModelError> {
        validate_dimensions(&dims)?;
        for row in &rows {
            row.validate(&dims)?;
        }
        Ok(Self { dims, rows })
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn rows(&self) -> &[ScoreVector] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.rows.len() * self.dims.len());
        for r in &self.rows {
            data.extend_from_slice(&r.values);
        }
        Matrix::from_row_major(self.rows.len(), self.dims.len(), data)
    }
}

/// Streaming fold over a corpus: record count, token total and duplicate ids.
#[derive(Debug, Clone, Default)]
pub struct CorpusSummary {
    count: u64,
    token_total: u64,
    // id -> (first position, seen more than once)
    seen: BTreeMap<String, (u64, bool)>,
}

impl CorpusSummary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, doc: &Document) {
        let pos = self.count;
        self.count += 1;
        self.token_total += doc.token_count;
        match self.seen.get_mut(&doc.id) {
            Some(entry) => entry.1 = true,
            None => {
                self.seen.insert(doc.id.to_string(), (pos, false));
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn token_total(&self) -> u64 {
        self.token_total
    }

    /// Ids occurring more than once, ordered by their first occurrence.
    pub fn duplicates(&self) -> Vec<String> {
        let mut dups: Vec<(u64, &String)> = self
            .seen
            .iter()
            .filter(|(_, (_, dup))| *dup)
            .map(|(id, (pos, _))| (*pos, id))
            .collect();
        dups.sort();
        dups.into_iter().map(|(_, id)| id.clone()).collect()
    }
}
