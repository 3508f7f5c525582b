//! Corpus labeling: one request per (document, dimension) cell, bounded
//! concurrency, retries and a score cache.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use odis_core::labeler::{parse_score, prompt_hash, render_prompt};
use odis_core::math::{fnv1a_extend, splitmix64, FNV_OFFSET};
use odis_core::{DimensionSpec, Document, ScoreVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient: {0}")]
    Transient(String),
    /// Retrying cannot help: bad credentials, malformed request.
    #[error("fatal: {0}")]
    Fatal(String),
}

/// A scoring backend: sends one prompt and returns the model's reply.
pub trait Transport: Sync {
    fn send(&self, model: &str, prompt: &str) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPolicy {
    pub model: String,
    /// Total attempts per cell, the first included.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on each further one.
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Requests in flight at once.
    pub concurrency: usize,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".into(),
            max_attempts: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            concurrency: 8,
        }
    }
}

impl LabelPolicy {
    fn backoff(&self, failed_attempts: u32) -> Duration {
        let factor = 1u64 << failed_attempts.saturating_sub(1).min(20);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// One cached cell score.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub dimension: String,
    /// Hex fingerprint of the rendered prompt.
    pub prompt_hash: String,
    pub score: u8,
}

/// Scores already obtained, keyed by (document id, dimension, prompt hash),
/// so an edited document or template is queried afresh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelCache {
    entries: BTreeMap<(String, String, String), u8>,
}

impl LabelCache {
    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        let mut cache = Self::default();
        if path.exists() {
            for e in jsonl::read_values::<CacheEntry>(path)? {
                cache.insert(e);
            }
        }
        Ok(cache)
    }

    pub fn insert(&mut self, e: CacheEntry) {
        self.entries.insert((e.id, e.dimension, e.prompt_hash), e.score);
    }

    pub fn get(&self, id: &str, dimension: &str, hash: &str) -> Option<u8> {
        self.entries
            .get(&(id.to_string(), dimension.to_string(), hash.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted JSON Lines.
    pub fn to_jsonl(&self) -> Vec<u8> {
        jsonl::to_jsonl(self.entries.iter().map(|((id, dimension, prompt_hash), score)| CacheEntry {
            id: id.clone(),
            dimension: dimension.clone(),
            prompt_hash: prompt_hash.clone(),
            score: *score,
        }))
    }
}

pub fn hash_hex(prompt: &str) -> String {
    format!("{:016x}", prompt_hash(prompt))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dimension: String,
    pub attempts: u32,
    pub error: String,
}

/// A document left out of the score file, with every failed dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub id: String,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub documents: usize,
    pub cells: usize,
    pub cached: usize,
    pub requests: u64,
    pub scored_documents: usize,
    pub failed_documents: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    /// Complete score vectors in input order.
    pub scores: Vec<ScoreVector>,
    pub failures: Vec<FailureEntry>,
    /// Input cache plus every newly obtained cell.
    pub cache: LabelCache,
    pub stats: LabelStats,
}

enum Cell {
    Cached(u8),
    Pending { prompt: String, hash: String },
    Unrenderable(String),
}

struct CellResult {
    score: Result<u8, String>,
    attempts: u32,
}

/// Scores every document on every dimension.
///
/// Cells run concurrently up to `policy.concurrency`; the output keeps input
/// order regardless of completion order. A document with any unrecoverable
/// cell goes to the failure list instead of the score list, and never
/// affects another document.
pub fn label_corpus(
    docs: &[Document],
    dims: &[DimensionSpec],
    transport: &dyn Transport,
    policy: &LabelPolicy,
    cache: &LabelCache,
) -> LabelOutcome {
    let m = dims.len();
    let mut cells = Vec::with_capacity(docs.len() * m);
    for doc in docs {
        for dim in dims {
            let cell = match render_prompt(doc, dim) {
                Ok(prompt) => {
                    let hash = hash_hex(&prompt);
                    match cache.get(&doc.id, &dim.name, &hash) {
                        Some(s) if s <= dim.scale_max => Cell::Cached(s),
                        _ => Cell::Pending { prompt, hash },
                    }
                }
                Err(e) => Cell::Unrenderable(e.to_string()),
            };
            cells.push(cell);
        }
    }

    let pending: Vec<usize> = (0..cells.len())
        .filter(|&i| matches!(cells[i], Cell::Pending { .. }))
        .collect();
    let results: Vec<OnceLock<CellResult>> = (0..cells.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let workers = policy.concurrency.max(1).min(pending.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(j) else { break };
                let Cell::Pending { prompt, .. } = &cells[i] else {
                    unreachable!("only pending cells are queued")
                };
                let result = query_cell(prompt, &dims[i % m], transport, policy);
                let _ = results[i].set(result);
            });
        }
    });

    let mut out_cache = cache.clone();
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut stats = LabelStats {
        documents: docs.len(),
        cells: cells.len(),
        ..LabelStats::default()
    };
    for (d, doc) in docs.iter().enumerate() {
        let mut values = Vec::with_capacity(m);
        let mut doc_failures = Vec::new();
        for (k, dim) in dims.iter().enumerate() {
            let i = d * m + k;
            match &cells[i] {
                Cell::Cached(s) => {
                    stats.cached += 1;
                    values.push(f64::from(*s));
                }
                Cell::Unrenderable(e) => doc_failures.push(CellFailure {
                    dimension: dim.name.clone(),
                    attempts: 0,
                    error: e.clone(),
                }),
                Cell::Pending { hash, .. } => {
                    let r = results[i].get().expect("every pending cell was processed");
                    stats.requests += u64::from(r.attempts);
                    match &r.score {
                        Ok(s) => {
                            values.push(f64::from(*s));
                            out_cache.insert(CacheEntry {
                                id: doc.id.clone(),
                                dimension: dim.name.clone(),
                                prompt_hash: hash.clone(),
                                score: *s,
                            });
                        }
                        Err(e) => doc_failures.push(CellFailure {
                            dimension: dim.name.clone(),
                            attempts: r.attempts,
                            error: e.clone(),
                        }),
                    }
                }
            }
        }
        if doc_failures.is_empty() {
            scores.push(ScoreVector::new(doc.id.clone(), values));
        } else {
            failures.push(FailureEntry {
                id: doc.id.clone(),
                failures: doc_failures,
            });
        }
    }
    stats.scored_documents = scores.len();
    stats.failed_documents = failures.len();
    LabelOutcome {
        scores,
        failures,
        cache: out_cache,
        stats,
    }
}

fn query_cell(prompt: &str, dim: &DimensionSpec, transport: &dyn Transport, policy: &LabelPolicy) -> CellResult {
    let max = policy.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=max {
        match transport.send(&policy.model, prompt) {
            Ok(reply) => match parse_score(&reply, dim) {
                Ok(s) => {
                    return CellResult {
                        score: Ok(s),
                        attempts: attempt,
                    }
                }
                Err(e) => last_error = e.to_string(),
            },
            Err(TransportError::Fatal(e)) => {
                return CellResult {
                    score: Err(format!("fatal: {e}")),
                    attempts: attempt,
                }
            }
            Err(TransportError::Transient(e)) => {
                last_error = format!("transient: {e}");
                if attempt < max {
                    thread::sleep(policy.backoff(attempt));
                }
            }
        }
    }
    CellResult {
        score: Err(last_error),
        attempts: max,
    }
}

/// One scripted reply of the mock transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockReply {
    pub id: String,
    pub dimension: String,
    pub reply: String,
}

/// Deterministic offline transport.
///
/// Replies come from a fixture keyed by (document, dimension); cells without
/// a fixture entry get a synthesised well-formed reply whose score is a hash
/// of the seed, document and dimension, or a fatal error when synthesis is
/// off. Transient failures can be injected at a fixed rate; whether attempt
/// `a` of a cell fails depends only on (seed, prompt, a), so outcomes do not
/// depend on scheduling.
pub struct MockTransport {
    replies: HashMap<u64, String>,
    synthetic: HashMap<u64, String>,
    failure_rate: f64,
    seed: u64,
    attempts: Mutex<HashMap<u64, u32>>,
}

impl MockTransport {
    pub fn new(docs: &[Document], dims: &[DimensionSpec], fixture: &[MockReply], synthesize: bool, seed: u64) -> Self {
        let by_cell: HashMap<(&str, &str), &str> = fixture
            .iter()
            .map(|r| ((r.id.as_str(), r.dimension.as_str()), r.reply.as_str()))
            .collect();
        let mut replies = HashMap::new();
        let mut synthetic = HashMap::new();
        for doc in docs {
            for dim in dims {
                let Ok(prompt) = render_prompt(doc, dim) else { continue };
                let h = prompt_hash(&prompt);
                if let Some(r) = by_cell.get(&(doc.id.as_str(), dim.name.as_str())) {
                    replies.insert(h, (*r).to_string());
                } else if synthesize {
                    let v = mix(seed, &[doc.id.as_bytes(), dim.name.as_bytes()]) % (u64::from(dim.scale_max) + 1);
                    synthetic.insert(h, format!("The extract was reviewed.\n{} {v}", dim.score_tag));
                }
            }
        }
        Self {
            replies,
            synthetic,
            failure_rate: 0.0,
            seed,
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_failure_rate(mut self, rate: f64) -> Self {
        self.failure_rate = rate;
        self
    }

    /// Requests received so far.
    pub fn calls(&self) -> u64 {
        self.attempts.lock().expect("mock lock").values().map(|&a| u64::from(a)).sum()
    }
}

fn mix(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = fnv1a_extend(FNV_OFFSET, &seed.to_le_bytes());
    for p in parts {
        h = fnv1a_extend(h, p);
        h = fnv1a_extend(h, &[0]);
    }
    splitmix64(h)
}

impl Transport for MockTransport {
    fn send(&self, _model: &str, prompt: &str) -> Result<String, TransportError> {
        let h = prompt_hash(prompt);
        let attempt = {
            let mut map = self.attempts.lock().expect("mock lock");
            let a = map.entry(h).or_insert(0);
            *a += 1;
            *a
        };
        if self.failure_rate > 0.0 {
            let u = (mix(self.seed, &[&h.to_le_bytes(), &attempt.to_le_bytes()]) >> 11) as f64 / (1u64 << 53) as f64;
            if u < self.failure_rate {
                return Err(TransportError::Transient(format!("injected failure on attempt {attempt}")));
            }
        }
        self.replies
            .get(&h)
            .or_else(|| self.synthetic.get(&h))
            .cloned()
            .ok_or_else(|| TransportError::Fatal("no scripted reply for this prompt".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use odis_core::default_dimension_registry;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("doc{i}"), format!("Text number {i} about tides."), 5))
            .collect()
    }

    fn fast() -> LabelPolicy {
        LabelPolicy {
            backoff_base_ms: 0,
            concurrency: 4,
            ..LabelPolicy::default()
        }
    }

    #[test]
    fn fixed_replies_give_complete_vectors() {
        let dims = default_dimension_registry();
        let d = docs(2);
        let fixture: Vec<MockReply> = d
            .iter()
            .flat_map(|doc| {
                dims.iter().map(|dim| MockReply {
                    id: doc.id.clone(),
                    dimension: dim.name.clone(),
                    reply: format!("fine.\n{} 2", dim.score_tag),
                })
            })
            .collect();
        let t = MockTransport::new(&d, &dims, &fixture, false, 0);
        let out = label_corpus(&d, &dims, &t, &fast(), &LabelCache::default());
        assert_eq!(out.scores.len(), 2);
        assert!(out.scores.iter().all(|s| s.values == vec![2.0; 11]));
        assert!(out.failures.is_empty());
        assert_eq!(out.cache.len(), 22);
    }

    #[test]
    fn persistent_failure_isolates_one_document() {
        let dims = default_dimension_registry();
        let d = docs(3);
        let fixture = vec![MockReply {
            id: "doc1".into(),
            dimension: dims[4].name.clone(),
            reply: "I cannot score this.".into(),
        }];
        let t = MockTransport::new(&d, &dims, &fixture, true, 5);
        let out = label_corpus(&d, &dims, &t, &fast(), &LabelCache::default());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].id, "doc1");
        assert_eq!(out.failures[0].failures[0].attempts, 3);
        assert_eq!(out.scores.iter().map(|s| s.doc_id.as_str()).collect::<Vec<_>>(), vec!["doc0", "doc2"]);

        let clean = MockTransport::new(&d, &dims, &[], true, 5);
        let reference = label_corpus(&d, &dims, &clean, &fast(), &LabelCache::default());
        assert_eq!(out.scores[0], reference.scores[0]);
        assert_eq!(out.scores[1], reference.scores[2]);
    }

    #[test]
    fn transient_failures_are_retried() {
        let dims = default_dimension_registry();
        let d = docs(100);
        let t = MockTransport::new(&d, &dims, &[], true, 9).with_failure_rate(0.1);
        let out = label_corpus(&d, &dims, &t, &fast(), &LabelCache::default());
        assert_eq!(out.scores.len() + out.failures.len(), 100);
        assert!(out.scores.len() >= 95);
        assert!(out.stats.requests > 1100);
        for f in &out.failures {
            assert!(f.failures.iter().all(|c| c.error.starts_with("transient")));
        }
    }

    #[test]
    fn output_is_independent_of_concurrency() {
        let dims = default_dimension_registry();
        let d = docs(20);
        let run = |workers| {
            let t = MockTransport::new(&d, &dims, &[], true, 3).with_failure_rate(0.3);
            let policy = LabelPolicy {
                concurrency: workers,
                ..fast()
            };
            label_corpus(&d, &dims, &t, &policy, &LabelCache::default())
        };
        let a = run(1);
        let b = run(16);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.failures, b.failures);
        assert_eq!(a.cache.to_jsonl(), b.cache.to_jsonl());
    }

    #[test]
    fn cached_cells_are_not_requeried() {
        let dims = default_dimension_registry();
        let d = docs(4);
        let t = MockTransport::new(&d, &dims, &[], true, 1);
        let first = label_corpus(&d, &dims, &t, &fast(), &LabelCache::default());
        let calls = t.calls();
        assert_eq!(calls, 44);
        let second = label_corpus(&d, &dims, &t, &fast(), &first.cache);
        assert_eq!(t.calls(), calls);
        assert_eq!(second.stats.cached, 44);
        assert_eq!(second.scores, first.scores);

        let mut edited = d.clone();
        edited[0].text.push_str(" Revised.");
        let third = label_corpus(&edited, &dims, &t, &fast(), &first.cache);
        assert_eq!(t.calls(), calls + 11);
        assert_eq!(third.stats.cached, 33);
    }

    #[test]
    fn empty_text_fails_without_requests() {
        let dims = default_dimension_registry();
        let d = vec![Document::new("e", "", 0)];
        let t = MockTransport::new(&d, &dims, &[], true, 1);
        let out = label_corpus(&d, &dims, &t, &fast(), &LabelCache::default());
        assert_eq!(out.failures[0].failures.len(), 11);
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = LabelPolicy {
            backoff_base_ms: 100,
            backoff_max_ms: 350,
            ..LabelPolicy::default()
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }
}
