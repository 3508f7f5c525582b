//! JSON Lines readers and writers for corpora, score files and embeddings.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use odis_core::diagnostics::EmbeddingSet;
use odis_core::{CorpusSummary, Document, ScoreVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// A parsed line together with its 1-based line number and original bytes.
#[derive(Debug, Clone)]
pub struct Record<T> {
    pub value: T,
    pub line: usize,
    pub raw: String,
}

/// Reads every non-blank line of `path` as a `T`.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<Record<T>>, JsonlError> {
    let io = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let raw = line.map_err(io)?;
        if raw.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&raw).map_err(|source| JsonlError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(Record {
            value,
            line: i + 1,
            raw,
        });
    }
    Ok(out)
}

pub fn read_values<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    Ok(read_records(path)?.into_iter().map(|r| r.value).collect())
}

/// Serialises `items` one per line, LF-terminated.
pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("in-memory JSON serialisation");
        out.push(b'\n');
    }
    out
}

/// Reads a corpus, rejecting duplicate ids.
pub fn read_corpus(path: &Path) -> Result<Vec<Record<Document>>, JsonlError> {
    let records: Vec<Record<Document>> = read_records(path)?;
    let (summary, first_dup) = summarize(&records);
    if let Some(line) = first_dup {
        return Err(JsonlError::Invalid {
            path: path.to_path_buf(),
            line,
            message: format!("duplicate document ids: {:?}", summary.duplicates()),
        });
    }
    Ok(records)
}

/// Streaming summary of a corpus file; duplicates are reported, not fatal.
pub fn validate_corpus(path: &Path) -> Result<CorpusSummary, JsonlError> {
    let records: Vec<Record<Document>> = read_records(path)?;
    Ok(summarize(&records).0)
}

fn summarize(records: &[Record<Document>]) -> (CorpusSummary, Option<usize>) {
    let mut summary = CorpusSummary::new();
    let mut first_dup = None;
    for r in records {
        let before = summary.duplicates().len();
        summary.add(&r.value);
        if first_dup.is_none() && summary.duplicates().len() > before {
            first_dup = Some(r.line);
        }
    }
    (summary, first_dup)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreVector>, JsonlError> {
    read_values(path)
}

/// One line of a `scores_pc<k>.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcScoreLine {
    pub id: String,
    pub score: f64,
}

pub fn read_pc_scores(path: &Path) -> Result<Vec<PcScoreLine>, JsonlError> {
    read_values(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub id: String,
    pub vector: Vec<f64>,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet, JsonlError> {
    let records: Vec<Record<EmbeddingLine>> = read_records(path)?;
    let dim = records.first().map_or(0, |r| r.value.vector.len());
    let mut set = EmbeddingSet::new(dim);
    for r in records {
        set.push(r.value.id, &r.value.vector).map_err(|e| JsonlError::Invalid {
            path: path.to_path_buf(),
            line: r.line,
            message: e.to_string(),
        })?;
    }
    Ok(set)
}

pub fn embeddings_to_jsonl(set: &EmbeddingSet) -> Vec<u8> {
    to_jsonl((0..set.len()).map(|i| EmbeddingLine {
        id: set.ids()[i].clone(),
        vector: set.vector(i).to_vec(),
    }))
}
