//! Synthetic end-to-end experiment: a corpus with a known latent factor
//! structure is pushed through every stage except labeling, then compared
//! against single-score and averaged-score baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{ensure, Result};
use odis_core::diagnostics::{decorrelation_residuals, DistanceSample, EmbeddingPostprocessor, EmbeddingSet};
use odis_core::selector::{compute_threshold, ScoredDoc};
use odis_core::{default_dimension_registry, BudgetStrategy, Document, ScoreMatrix, ScoreVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::OutputDir;
use crate::config::PipelineConfig;
use crate::formats::pretty;
use crate::jsonl;
use crate::pipeline::{self, ScorerSummary};

pub const FACTORS: usize = 4;
pub const EMBEDDING_DIM: usize = 64;
pub const DEFAULT_SIZE: usize = 10_000;
pub const SYNTH_DIR: &str = "synth";
const BUDGET_FRACTION: f64 = 0.2;
const BOOTSTRAP_RESAMPLES: usize = 20;

/// Magnitude of the dominant factor of each document.
const DOMINANT: f64 = 3.0;
/// Latent factor of each score dimension with its loading strength.
const DIM_FACTOR: [(usize, f64); 11] = [
    (1, 0.85),
    (1, 0.85),
    (1, 0.85),
    (0, 1.0),
    (0, 1.0),
    (0, 1.0),
    (3, 0.65),
    (3, 0.65),
    (2, 0.6),
    (2, 0.6),
    (2, 0.6),
];
const SCORE_NOISE: f64 = 0.25;
const MARKER_RATE: f64 = 0.05;
const MARKERS_PER_POLE: usize = 8;
const NUISANCE: usize = 3;
const NUISANCE_STD: f64 = 6.0;
const EMBEDDING_NOISE: f64 = 0.3;

/// Generated inputs. Scores exist for the reference documents only.
pub struct SynthCorpus {
    pub reference: Vec<Document>,
    pub reference_scores: Vec<ScoreVector>,
    pub target: Vec<Document>,
    pub embeddings: EmbeddingSet,
    /// Dominant factor of every target document.
    pub target_factor: BTreeMap<String, usize>,
}

struct Vocabulary {
    filler: Vec<String>,
    /// `markers[f][0]` raise factor `f`, `markers[f][1]` lower it.
    markers: Vec<[Vec<String>; 2]>,
}

fn words(rng: &mut ChaCha8Rng, consonants: &[u8], n: usize, syllables: usize) -> Vec<String> {
    const VOWELS: &[u8] = b"aeiou";
    let mut out = BTreeSet::new();
    while out.len() < n {
        let w: String = (0..syllables)
            .flat_map(|_| {
                [
                    consonants[rng.random_range(0..consonants.len())] as char,
                    VOWELS[rng.random_range(0..VOWELS.len())] as char,
                ]
            })
            .collect();
        out.insert(w);
    }
    let mut v: Vec<String> = out.into_iter().collect();
    v.shuffle(rng);
    v
}

impl Vocabulary {
    /// Fixed across seeds; marker words share no letters with filler
    /// consonants, so their character n-grams stay distinctive.
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x05ee_d0f7_0c4b);
        let filler = words(&mut rng, b"bcdfghklmnprstv", 500, 3);
        let pool = words(&mut rng, b"jqwxyz", FACTORS * 2 * MARKERS_PER_POLE, 3);
        let markers = pool
            .chunks(2 * MARKERS_PER_POLE)
            .map(|c| [c[..MARKERS_PER_POLE].to_vec(), c[MARKERS_PER_POLE..].to_vec()])
            .collect();
        Self { filler, markers }
    }
}

fn latent(rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> (usize, [f64; FACTORS]) {
    let c = rng.random_range(0..FACTORS);
    let mut z = [0.0; FACTORS];
    for (f, v) in z.iter_mut().enumerate() {
        *v = if f == c {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * (DOMINANT + 0.3 * normal.sample(rng))
        } else {
            normal.sample(rng)
        };
    }
    (c, z)
}

fn text(rng: &mut ChaCha8Rng, vocab: &Vocabulary, z: &[f64; FACTORS]) -> Vec<String> {
    let len = rng.random_range(80..=300usize);
    let mut out = Vec::with_capacity(len);
    for (f, &v) in z.iter().enumerate() {
        let pole = usize::from(v < 0.0);
        let n = (len as f64 * MARKER_RATE * v.abs()).round() as usize;
        let pool = &vocab.markers[f][pole];
        out.extend((0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()));
    }
    out.truncate(len);
    while out.len() < len {
        out.push(vocab.filler[rng.random_range(0..vocab.filler.len())].clone());
    }
    out.shuffle(rng);
    out
}

fn raw_scores(rng: &mut ChaCha8Rng, normal: &Normal<f64>, z: &[f64; FACTORS]) -> Vec<f64> {
    default_dimension_registry()
        .iter()
        .zip(DIM_FACTOR)
        .map(|(d, (f, s))| {
            let max = f64::from(d.scale_max);
            let v = max / 2.0 + max * s * z[f] / 7.0 + SCORE_NOISE * normal.sample(rng);
            v.round().clamp(0.0, max)
        })
        .collect()
}

fn orthonormal_directions(rng: &mut ChaCha8Rng, normal: &Normal<f64>, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Generates `size` target documents and `size / 4` labeled reference
/// documents from the same latent model.
pub fn generate(seed: u64, size: usize) -> SynthCorpus {
    let vocab = Vocabulary::new();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = orthonormal_directions(&mut rng, &normal, FACTORS + NUISANCE + 1, EMBEDDING_DIM);
    let (factor_dirs, rest) = dirs.split_at(FACTORS);
    let (nuisance_dirs, mean_dir) = rest.split_at(NUISANCE);

    let n_ref = (size / 4).max(8);
    let mut reference = Vec::with_capacity(n_ref);
    let mut reference_scores = Vec::with_capacity(n_ref);
    for i in 0..n_ref {
        let (c, z) = latent(&mut rng, &normal);
        let words = text(&mut rng, &vocab, &z);
        let id = format!("ref-{i:06}");
        reference_scores.push(ScoreVector::new(id.clone(), raw_scores(&mut rng, &normal, &z)));
        reference.push(Document::new(id, words.join(" "), words.len() as u64).with_domain(format!("topic{c}")));
    }

    let mut target = Vec::with_capacity(size);
    let mut target_factor = BTreeMap::new();
    let mut embeddings = EmbeddingSet::new(EMBEDDING_DIM);
    for i in 0..size {
        let (c, z) = latent(&mut rng, &normal);
        let words = text(&mut rng, &vocab, &z);
        let id = format!("doc-{i:06}");
        let mut v: Vec<f64> = mean_dir[0].iter().map(|x| 0.5 * x).collect();
        for (d, &zf) in factor_dirs.iter().zip(&z) {
            v.iter_mut().zip(d).for_each(|(x, y)| *x += zf * y);
        }
        for d in nuisance_dirs {
            let a = NUISANCE_STD * normal.sample(&mut rng);
            v.iter_mut().zip(d).for_each(|(x, y)| *x += a * y);
        }
        v.iter_mut().for_each(|x| *x += EMBEDDING_NOISE * normal.sample(&mut rng));
        embeddings.push(id.clone(), &v).expect("fixed dimension");
        target_factor.insert(id.clone(), c);
        target.push(Document::new(id, words.join(" "), words.len() as u64).with_domain(format!("topic{c}")));
    }
    SynthCorpus {
        reference,
        reference_scores,
        target,
        embeddings,
        target_factor,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityRow {
    pub selection: String,
    pub docs: usize,
    pub tokens: u64,
    pub mean_distance: f64,
    pub bootstrap_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub gap: f64,
    pub combined_se: f64,
    pub gap_in_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub seed: u64,
    pub size: usize,
    pub reference_docs: usize,
    pub pool_tokens: u64,
    pub total_budget: u64,
    pub k: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub decorrelation: odis_core::diagnostics::DecorrelationResiduals,
    pub scorers: Vec<ScorerSummary>,
    pub overlap_ratio_tokens: f64,
    pub overlap_ratio_tokens_brute_force: f64,
    pub overlap_ratio_docs: f64,
    pub union_tokens: u64,
    /// Share of each component's selection drawn from its most common
    /// latent factor.
    pub factor_purity: Vec<f64>,
    pub diversity: Vec<DiversityRow>,
    pub comparisons: Vec<Comparison>,
}

fn top_k_ids(docs: &[Document], scores: &BTreeMap<String, f64>, budget: u64) -> Result<Vec<String>> {
    let scored: Vec<ScoredDoc<'_>> = docs
        .iter()
        .map(|d| ScoredDoc {
            id: &d.id,
            score: scores[&d.id],
            tokens: d.token_count,
        })
        .collect();
    Ok(compute_threshold(&scored, budget)?.selected)
}

fn token_sum(ids: &[String], tokens: &BTreeMap<String, u64>) -> u64 {
    ids.iter().map(|id| tokens[id]).sum()
}

/// Token-weighted share of the union that lies in two or more selections,
/// computed from plain sets.
fn brute_force_overlap(per_dim: &[Vec<String>], tokens: &BTreeMap<String, u64>) -> f64 {
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for ids in per_dim {
        for id in ids.iter().collect::<BTreeSet<_>>() {
            *count.entry(id).or_default() += 1;
        }
    }
    let union: u64 = count.keys().map(|id| tokens[*id]).sum();
    let shared: u64 = count.iter().filter(|(_, &n)| n >= 2).map(|(id, _)| tokens[*id]).sum();
    if union == 0 {
        0.0
    } else {
        shared as f64 / union as f64
    }
}

/// Generates the corpus under `<out>/synth/`, runs the pipeline into `out`
/// and writes `report/synth_eval.json` and `report/diversity.csv`.
pub fn run(out_root: &Path, seed: u64, size: usize, force: bool) -> Result<SynthReport> {
    ensure!(size >= 100, "synth-eval needs at least 100 documents, got {size}");
    let corpus = generate(seed, size);
    let data = out_root.join(SYNTH_DIR);
    let mut cfg = PipelineConfig::default();
    cfg.paths.reference = Some(data.join("reference.jsonl"));
    cfg.paths.reference_scores = Some(data.join("reference_scores.jsonl"));
    cfg.paths.target = Some(data.join("target.jsonl"));
    cfg.paths.embeddings = Some(data.join("embeddings.jsonl"));
    cfg.pca.k = Some(FACTORS);
    cfg.selection.budget_fraction = Some(BUDGET_FRACTION);
    cfg.selection.strategy = BudgetStrategy::Uniform;
    cfg.diagnostics.seed = seed;
    cfg.validate()?;
    let out = OutputDir::open(out_root, &cfg.hash(), force)?;

    let mut st = out.stage("synth-data");
    st.add(format!("{SYNTH_DIR}/reference.jsonl"), jsonl::to_jsonl(&corpus.reference));
    st.add(format!("{SYNTH_DIR}/reference_scores.jsonl"), jsonl::to_jsonl(&corpus.reference_scores));
    st.add(format!("{SYNTH_DIR}/target.jsonl"), jsonl::to_jsonl(&corpus.target));
    st.add(format!("{SYNTH_DIR}/embeddings.jsonl"), jsonl::embeddings_to_jsonl(&corpus.embeddings));
    st.commit(json!({ "seed": seed, "size": size }))?;

    pipeline::fit_pca(&cfg, &out)?;
    let (_, scorers) = pipeline::train_scorer(&cfg, &out, None)?;
    pipeline::score(&cfg, &out)?;
    let (_, selection) = pipeline::select(&cfg, &out)?;
    pipeline::report(&cfg, &out)?;

    let mut st = out.stage("synth-eval");
    let model = pipeline::load_pca(&out, &mut st)?;
    let matrix = ScoreMatrix::new(default_dimension_registry(), corpus.reference_scores.clone())?;
    let decorrelation = decorrelation_residuals(&model, &matrix.to_matrix())?;

    let tokens: BTreeMap<String, u64> = corpus.target.iter().map(|d| (d.id.clone(), d.token_count)).collect();
    let pool_tokens: u64 = tokens.values().sum();
    let mut pc_scores: Vec<BTreeMap<String, f64>> = Vec::with_capacity(model.k);
    for k in 1..=model.k {
        let path = out.path(&pipeline::scores_file(k));
        st.input(&path)?;
        pc_scores.push(jsonl::read_pc_scores(&path)?.into_iter().map(|l| (l.id, l.score)).collect());
    }
    let averaged: BTreeMap<String, f64> = corpus
        .target
        .iter()
        .map(|d| {
            let s: f64 = pc_scores.iter().map(|m| m[&d.id]).sum();
            (d.id.clone(), s / model.k as f64)
        })
        .collect();

    let union_ids: Vec<String> = selection.union_ids().into_iter().map(str::to_owned).collect();
    let budget = selection.union_tokens;
    let selections = vec![
        ("odis_union".to_string(), union_ids),
        ("pc1_top_k".to_string(), top_k_ids(&corpus.target, &pc_scores[0], budget)?),
        ("averaged_pc_top_k".to_string(), top_k_ids(&corpus.target, &averaged, budget)?),
    ];

    let post = EmbeddingPostprocessor::fit(&corpus.embeddings, cfg.diagnostics.components_removed)?;
    let processed = post.apply(&corpus.embeddings)?;
    let mut diversity = Vec::new();
    for (name, ids) in &selections {
        let sample = DistanceSample::new(&processed.subset(ids)?, cfg.diagnostics.sample_n, seed)?;
        diversity.push(DiversityRow {
            selection: name.clone(),
            docs: ids.len(),
            tokens: token_sum(ids, &tokens),
            mean_distance: sample.stats().mean,
            bootstrap_se: sample.bootstrap_se(BOOTSTRAP_RESAMPLES, seed),
        });
    }
    let odis = diversity[0].clone();
    let comparisons = diversity[1..]
        .iter()
        .map(|b| {
            let gap = odis.mean_distance - b.mean_distance;
            let combined_se = (odis.bootstrap_se.powi(2) + b.bootstrap_se.powi(2)).sqrt();
            Comparison {
                baseline: b.selection.clone(),
                gap,
                combined_se,
                gap_in_se: if combined_se > 0.0 { gap / combined_se } else { f64::INFINITY },
            }
        })
        .collect();

    let factor_purity = selection
        .per_dim_ids
        .iter()
        .map(|ids| {
            let mut counts = [0usize; FACTORS];
            for id in ids {
                counts[corpus.target_factor[id]] += 1;
            }
            let top = counts.iter().copied().max().unwrap_or(0);
            if ids.is_empty() {
                0.0
            } else {
                top as f64 / ids.len() as f64
            }
        })
        .collect();

    let report = SynthReport {
        seed,
        size,
        reference_docs: corpus.reference.len(),
        pool_tokens,
        total_budget: pipeline::total_budget(&cfg, pool_tokens)?,
        k: model.k,
        explained_variance_ratio: model.explained_variance_ratio(),
        decorrelation,
        scorers,
        overlap_ratio_tokens: selection.overlap.overlap_ratio_tokens,
        overlap_ratio_tokens_brute_force: brute_force_overlap(&selection.per_dim_ids, &tokens),
        overlap_ratio_docs: selection.overlap.overlap_ratio_docs,
        union_tokens: selection.union_tokens,
        factor_purity,
        diversity,
        comparisons,
    };
    st.add(format!("{}/synth_eval.json", pipeline::REPORT_DIR), pretty(&report));
    st.add(format!("{}/diversity.csv", pipeline::REPORT_DIR), diversity_csv(&report.diversity));
    st.commit(json!({ "overlap_ratio_tokens": report.overlap_ratio_tokens }))?;
    Ok(report)
}

fn diversity_csv(rows: &[DiversityRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["selection", "docs", "tokens", "mean_distance", "bootstrap_se"])
        .expect("in-memory CSV");
    for r in rows {
        w.write_record([
            r.selection.clone(),
            r.docs.to_string(),
            r.tokens.to_string(),
            r.mean_distance.to_string(),
            r.bootstrap_se.to_string(),
        ])
        .expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let a = generate(7, 200);
        let b = generate(7, 200);
        let c = generate(8, 200);
        assert_eq!(a.target[5].text, b.target[5].text);
        assert_eq!(a.reference_scores[3].values, b.reference_scores[3].values);
        assert_ne!(a.target[5].text, c.target[5].text);
        assert_eq!(a.reference.len(), 50);
        assert_eq!(a.embeddings.len(), 200);
    }

    #[test]
    fn scores_respect_scale_maxima_and_tokens_match_words() {
        let c = generate(1, 120);
        let dims = default_dimension_registry();
        for s in &c.reference_scores {
            s.validate(&dims).unwrap();
        }
        for d in &c.target {
            assert_eq!(d.text.split(' ').count() as u64, d.token_count);
        }
    }

    #[test]
    fn brute_force_overlap_counts_shared_tokens() {
        let tokens: BTreeMap<String, u64> = [("a", 10), ("b", 20), ("c", 30)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let per_dim = vec![vec!["a".to_string(), "b".to_string()], vec!["b".to_string(), "c".to_string()]];
        assert!((brute_force_overlap(&per_dim, &tokens) - 20.0 / 60.0).abs() < 1e-15);
    }
}
