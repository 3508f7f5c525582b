//! The pipeline stages. Each reads its inputs, computes everything in
//! memory and publishes its artifacts together with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use odis_core::diagnostics::{
    decorrelation_residuals, dimension_correlations, postprocess_embeddings, score_distribution_report,
    structure_loadings, CorrelationMatrix, DistanceSample, EmbeddingSet,
};
use odis_core::math::{fnv1a_extend, splitmix64, FNV_OFFSET};
use odis_core::scorer::{evaluate_scorer, featurize, tune_lambda, training_fingerprint, LAMBDA_GRID};
use odis_core::selector::{allocate_budget, overlap_report, select as select_union, UpsetCell};
use odis_core::{
    default_dimension_registry, Document, FeatureVector, PcaModel, PcaOptions, ScoreMatrix, SelectionResult,
    SurrogateScorer,
};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{OutputDir, StageManifest, StageWriter};
use crate::config::PipelineConfig;
use crate::formats::{pca_from_json, pca_to_json, pretty, scorer_from_json, scorer_to_json};
use crate::jsonl::{self, PcScoreLine, Record};
use crate::labeling::{label_corpus, LabelCache, Transport};
use crate::report;

pub const REFERENCE_SCORES: &str = "reference_scores.jsonl";
pub const LABEL_FAILURES: &str = "label_failures.jsonl";
pub const LABEL_CACHE: &str = "label_cache.jsonl";
pub const PCA_MODEL: &str = "pca_model.json";
pub const SELECTION_MANIFEST: &str = "selection_manifest.json";
pub const SELECTED: &str = "selected.jsonl";
pub const REPORT_DIR: &str = "report";

/// `scorer_k<k>.json`, `k` 1-based.
pub fn scorer_file(k: usize) -> String {
    format!("scorer_k{k}.json")
}

/// `scores_pc<k>.jsonl`, `k` 1-based.
pub fn scores_file(k: usize) -> String {
    format!("scores_pc{k}.jsonl")
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("{key} is not set; give it in the config file or on the command line"))
}

fn existing(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing input {}: {hint}", path.display());
    }
    Ok(())
}

fn reference_scores_path(cfg: &PipelineConfig, out: &OutputDir) -> PathBuf {
    cfg.paths
        .reference_scores
        .clone()
        .unwrap_or_else(|| out.path(REFERENCE_SCORES))
}

fn read_corpus(path: &Path) -> Result<Vec<Record<Document>>> {
    jsonl::read_corpus(path).map_err(Into::into)
}

/// Queries the scoring backend for every reference document.
pub fn label(cfg: &PipelineConfig, out: &OutputDir, transport: &dyn Transport) -> Result<StageManifest> {
    let reference = required(&cfg.paths.reference, "paths.reference")?;
    let mut st = out.stage("label");
    st.input(reference)?;
    let docs: Vec<Document> = read_corpus(reference)?.into_iter().map(|r| r.value).collect();
    let cache = LabelCache::load(&out.path(LABEL_CACHE))?;
    let outcome = label_corpus(&docs, &default_dimension_registry(), transport, &cfg.labeling.policy(), &cache);
    st.add(REFERENCE_SCORES, jsonl::to_jsonl(&outcome.scores));
    st.add(LABEL_FAILURES, jsonl::to_jsonl(&outcome.failures));
    st.add(LABEL_CACHE, outcome.cache.to_jsonl());
    st.commit(json!({ "stats": outcome.stats }))
}

fn load_reference_matrix(cfg: &PipelineConfig, out: &OutputDir, st: &mut StageWriter<'_>) -> Result<ScoreMatrix> {
    let path = reference_scores_path(cfg, out);
    existing(&path, "run `odis label` first or set paths.reference_scores")?;
    st.input(&path)?;
    let rows = jsonl::read_scores(&path)?;
    ScoreMatrix::new(default_dimension_registry(), rows).with_context(|| format!("invalid scores in {}", path.display()))
}

fn pca_options(cfg: &PipelineConfig) -> PcaOptions {
    PcaOptions {
        tau: cfg.pca.tau,
        k: cfg.pca.k,
        standardize: cfg.pca.standardize,
    }
}

/// Fits the decomposition on the reference scores.
pub fn fit_pca(cfg: &PipelineConfig, out: &OutputDir) -> Result<StageManifest> {
    let mut st = out.stage("fit-pca");
    let matrix = load_reference_matrix(cfg, out, &mut st)?;
    let model = PcaModel::fit_scores(&matrix, pca_options(cfg)).context("PCA fit failed")?;
    let residuals = decorrelation_residuals(&model, &matrix.to_matrix())?;
    st.add(PCA_MODEL, pca_to_json(&model, &matrix.labels()));
    st.commit(json!({
        "rows": matrix.n_rows(),
        "k": model.k,
        "eigenvalues": model.eigenvalues,
        "explained_variance_ratio": model.explained_variance_ratio(),
        "decorrelation": residuals,
    }))
}

pub fn load_pca(out: &OutputDir, st: &mut StageWriter<'_>) -> Result<PcaModel> {
    let path = out.path(PCA_MODEL);
    existing(&path, "run `odis fit-pca` first")?;
    st.input(&path)?;
    let bytes = std::fs::read(&path)?;
    Ok(pca_from_json(&bytes).with_context(|| format!("cannot load {}", path.display()))?.0)
}

/// Deterministic holdout membership from a keyed hash of the id.
pub fn in_holdout(id: &str, fraction: f64, seed: u64) -> bool {
    if fraction <= 0.0 {
        return false;
    }
    let h = splitmix64(fnv1a_extend(fnv1a_extend(FNV_OFFSET, &seed.to_le_bytes()), id.as_bytes()));
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

/// Reference documents paired with their rescaled component targets.
struct TrainingSet {
    texts: Vec<String>,
    ids: Vec<String>,
    features: Vec<FeatureVector>,
    targets: Vec<Vec<f64>>,
}

fn training_set(cfg: &PipelineConfig, out: &OutputDir, model: &PcaModel, st: &mut StageWriter<'_>) -> Result<TrainingSet> {
    let reference = required(&cfg.paths.reference, "paths.reference")?;
    st.input(reference)?;
    let matrix = load_reference_matrix(cfg, out, st)?;
    let docs: BTreeMap<String, Document> = read_corpus(reference)?
        .into_iter()
        .map(|r| (r.value.id.clone(), r.value))
        .collect();
    let fc = cfg.scorer.features();
    let mut set = TrainingSet {
        texts: Vec::new(),
        ids: Vec::new(),
        features: Vec::new(),
        targets: Vec::new(),
    };
    for row in matrix.rows() {
        let doc = docs
            .get(&row.doc_id)
            .ok_or_else(|| anyhow!("scored document {} is missing from {}", row.doc_id, reference.display()))?;
        set.targets.push(model.project(&row.values)?);
        set.features.push(featurize(&doc.text, &fc));
        set.texts.push(doc.text.clone());
        set.ids.push(doc.id.clone());
    }
    Ok(set)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScorerSummary {
    pub pc: usize,
    pub lambda: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub train_rmse: f64,
    pub holdout: Option<odis_core::scorer::ScorerMetrics>,
}

/// Trains the surrogate scorer of component `pc` (1-based), or of every
/// retained component when `pc` is `None`.
pub fn train_scorer(
    cfg: &PipelineConfig,
    out: &OutputDir,
    pc: Option<usize>,
) -> Result<(StageManifest, Vec<ScorerSummary>)> {
    let mut st = out.stage("train-scorer");
    let model = load_pca(out, &mut st)?;
    let pcs: Vec<usize> = match pc {
        Some(k) if k == 0 || k > model.k => bail!("--pc must lie in 1..={}, got {k}", model.k),
        Some(k) => vec![k],
        None => (1..=model.k).collect(),
    };
    let set = training_set(cfg, out, &model, &mut st)?;
    let seed = cfg.diagnostics.seed;
    let holdout: Vec<bool> = set.ids.iter().map(|id| in_holdout(id, cfg.scorer.holdout, seed)).collect();
    let fc = cfg.scorer.features();
    let mut summaries = Vec::new();
    for k in pcs {
        let c = k - 1;
        let mut train_f = Vec::new();
        let mut train_y = Vec::new();
        let mut train_pairs = Vec::new();
        let mut hold = Vec::new();
        for (i, &held) in holdout.iter().enumerate() {
            let y = set.targets[i][c];
            if held {
                hold.push((set.features[i].clone(), y, i));
            } else {
                train_f.push(set.features[i].clone());
                train_y.push(y);
                train_pairs.push((set.texts[i].as_str(), y));
            }
        }
        let lambda = if cfg.scorer.tune && hold.len() >= 2 {
            let train: Vec<(FeatureVector, f64)> = train_f.iter().cloned().zip(train_y.iter().copied()).collect();
            let h: Vec<(FeatureVector, f64)> = hold.iter().map(|(f, y, _)| (f.clone(), *y)).collect();
            tune_lambda(&train, &h, fc.n_buckets, &LAMBDA_GRID)?.0
        } else {
            cfg.scorer.lambda
        };
        let scorer = SurrogateScorer::fit_featurized(
            &train_f,
            &train_y,
            training_fingerprint(&train_pairs),
            lambda,
            c,
            fc,
        )
        .with_context(|| format!("training the PC{k} scorer failed"))?;
        let metrics = if hold.len() >= 2 {
            let pairs: Vec<(&str, f64)> = hold.iter().map(|(_, y, i)| (set.texts[*i].as_str(), *y)).collect();
            Some(evaluate_scorer(&scorer, &pairs)?)
        } else {
            None
        };
        st.add(scorer_file(k), scorer_to_json(&scorer, metrics));
        summaries.push(ScorerSummary {
            pc: k,
            lambda,
            n_train: train_f.len(),
            n_holdout: hold.len(),
            train_rmse: scorer.meta.train_rmse,
            holdout: metrics,
        });
    }
    let manifest = st.commit(json!({ "scorers": summaries }))?;
    Ok((manifest, summaries))
}

fn load_scorers(out: &OutputDir, k: usize, st: &mut StageWriter<'_>) -> Result<Vec<SurrogateScorer>> {
    let missing: Vec<String> = (1..=k)
        .map(scorer_file)
        .filter(|f| !out.path(f).exists())
        .collect();
    if !missing.is_empty() {
        bail!(
            "missing scorer files in {}: {}; run `odis train-scorer` first",
            out.root().display(),
            missing.join(", ")
        );
    }
    let mut scorers = Vec::with_capacity(k);
    for i in 1..=k {
        let path = out.path(&scorer_file(i));
        st.input(&path)?;
        let (s, _) = scorer_from_json(&std::fs::read(&path)?).with_context(|| format!("cannot load {}", path.display()))?;
        scorers.push(s);
    }
    Ok(scorers)
}

/// Applies `f` to every document on all cores, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    })
}

/// Scores the target corpus with every component's scorer.
pub fn score(cfg: &PipelineConfig, out: &OutputDir) -> Result<StageManifest> {
    let mut st = out.stage("score");
    let model = load_pca(out, &mut st)?;
    let scorers = load_scorers(out, model.k, &mut st)?;
    let target = required(&cfg.paths.target, "paths.target")?;
    st.input(target)?;
    let docs = read_corpus(target)?;
    let fc = scorers[0].meta.features;
    if scorers.iter().any(|s| s.meta.features != fc) {
        bail!("scorers were trained with different feature settings");
    }
    let scored: Vec<Vec<f64>> = parallel_map(&docs, |r| {
        let f = featurize(&r.value.text, &fc);
        scorers.iter().map(|s| s.score_features(&f)).collect()
    });
    for (c, _) in scorers.iter().enumerate() {
        let lines = docs.iter().zip(&scored).map(|(r, s)| PcScoreLine {
            id: r.value.id.clone(),
            score: s[c],
        });
        st.add(scores_file(c + 1), jsonl::to_jsonl(lines));
    }
    st.commit(json!({ "documents": docs.len(), "k": model.k }))
}

#[derive(Debug, Clone, Serialize)]
pub struct UpsetRow {
    pub components: String,
    pub docs: u64,
    pub tokens: u64,
}

/// The persisted selection summary. Thresholds of empty selections are
/// `null`.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionManifest {
    pub config_hash: String,
    pub strategy: odis_core::BudgetStrategy,
    pub total_budget: u64,
    pub budgets: Vec<u64>,
    pub thresholds: Vec<Option<f64>>,
    pub per_dim_token_totals: Vec<u64>,
    pub per_dim_doc_counts: Vec<usize>,
    pub union_token_total: u64,
    pub union_doc_count: usize,
    pub overlap_ratio_tokens: f64,
    pub overlap_ratio_docs: f64,
    pub pairwise_docs: Vec<Vec<u64>>,
    pub pairwise_token_jaccard: Vec<Vec<f64>>,
    pub upset_cells: Vec<UpsetRow>,
}

pub fn selection_manifest(
    config_hash: &str,
    strategy: odis_core::BudgetStrategy,
    total: u64,
    r: &SelectionResult,
    cells: &[UpsetCell],
) -> SelectionManifest {
    SelectionManifest {
        config_hash: config_hash.into(),
        strategy,
        total_budget: total,
        budgets: r.budgets.clone(),
        thresholds: r.thresholds.iter().map(|t| t.is_finite().then_some(*t)).collect(),
        per_dim_token_totals: r.per_dim_tokens.clone(),
        per_dim_doc_counts: r.per_dim_ids.iter().map(Vec::len).collect(),
        union_token_total: r.union_tokens,
        union_doc_count: r.memberships.len(),
        overlap_ratio_tokens: r.overlap.overlap_ratio_tokens,
        overlap_ratio_docs: r.overlap.overlap_ratio_docs,
        pairwise_docs: r.overlap.pairwise_docs.clone(),
        pairwise_token_jaccard: r.overlap.pairwise_token_ratio.clone(),
        upset_cells: cells
            .iter()
            .map(|c| UpsetRow {
                components: report::upset_label(&c.components),
                docs: c.docs,
                tokens: c.tokens,
            })
            .collect(),
    }
}

/// Total budget from the config: explicit tokens or a fraction of the pool.
pub fn total_budget(cfg: &PipelineConfig, pool_tokens: u64) -> Result<u64> {
    match (cfg.selection.budget_tokens, cfg.selection.budget_fraction) {
        (Some(b), _) => Ok(b),
        (None, Some(f)) => Ok(((pool_tokens as f64 * f).floor() as u64).max(1)),
        (None, None) => bail!("set selection.budget_tokens or selection.budget_fraction"),
    }
}

/// Per-component thresholds under the token budget and their union.
pub fn select(cfg: &PipelineConfig, out: &OutputDir) -> Result<(StageManifest, SelectionResult)> {
    let mut st = out.stage("select");
    let model = load_pca(out, &mut st)?;
    let missing: Vec<String> = (1..=model.k)
        .map(scores_file)
        .filter(|f| !out.path(f).exists())
        .collect();
    if !missing.is_empty() {
        bail!("missing score files: {}; run `odis score` first", missing.join(", "));
    }
    let target = required(&cfg.paths.target, "paths.target")?;
    st.input(target)?;
    let docs = read_corpus(target)?;
    let tokens: BTreeMap<String, u64> = docs.iter().map(|r| (r.value.id.clone(), r.value.token_count)).collect();
    let mut streams = Vec::with_capacity(model.k);
    for k in 1..=model.k {
        let path = out.path(&scores_file(k));
        st.input(&path)?;
        let lines = jsonl::read_pc_scores(&path)?;
        streams.push(lines.into_iter().map(|l| (l.id, l.score)).collect::<Vec<_>>());
    }
    let pool: u64 = tokens.values().sum();
    let total = total_budget(cfg, pool)?;
    let plan = allocate_budget(total, &model.eigenvalues[..model.k], cfg.selection.strategy)?;
    let result = select_union(&plan, &streams, &tokens)?;
    let cells = overlap_report(&result);
    let manifest = selection_manifest(out.config_hash(), plan.strategy, total, &result, &cells);
    st.add(SELECTION_MANIFEST, pretty(&manifest));
    let mut selected = Vec::new();
    for r in &docs {
        if result.contains(&r.value.id) {
            selected.extend_from_slice(r.raw.as_bytes());
            selected.push(b'\n');
        }
    }
    st.add(SELECTED, selected);
    st.add(format!("{REPORT_DIR}/upset_cells.csv"), report::upset_csv(&cells));
    let stage = st.commit(json!({
        "pool_tokens": pool,
        "union_tokens": result.union_tokens,
        "overlap_ratio_tokens": result.overlap.overlap_ratio_tokens,
    }))?;
    Ok((stage, result))
}

fn pc_labels(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("PC{i}")).collect()
}

/// Distance statistics of named subsets of post-processed embeddings.
pub fn distance_rows(
    processed: &EmbeddingSet,
    subsets: &[(String, Vec<String>)],
    sample_n: usize,
    seed: u64,
) -> Result<Vec<(String, odis_core::diagnostics::DistanceStats, Option<f64>)>> {
    let mut rows = Vec::new();
    for (name, ids) in subsets {
        let sub = processed.subset(ids)?;
        if sub.len() < 2 {
            continue;
        }
        let sample = DistanceSample::new(&sub, sample_n, seed)?;
        let se = sample.bootstrap_se(20, seed);
        rows.push((name.clone(), sample.stats(), Some(se)));
    }
    Ok(rows)
}

/// Correlation tables, score distributions and embedding distances from
/// whatever earlier artifacts exist.
pub fn report(cfg: &PipelineConfig, out: &OutputDir) -> Result<StageManifest> {
    let mut st = out.stage("report");
    let mut produced = Vec::new();
    let scores_path = reference_scores_path(cfg, out);
    let model = if out.path(PCA_MODEL).exists() {
        Some(load_pca(out, &mut st)?)
    } else {
        None
    };
    if scores_path.exists() {
        let matrix = load_reference_matrix(cfg, out, &mut st)?;
        st.add(
            format!("{REPORT_DIR}/dimension_correlations.csv"),
            report::correlation_csv(&dimension_correlations(&matrix)?),
        );
        produced.push("dimension_correlations");
        if let Some(model) = &model {
            st.add(
                format!("{REPORT_DIR}/structure_loadings.csv"),
                report::correlation_csv(&structure_loadings(model, &matrix)?),
            );
            let x = matrix.to_matrix();
            let raw = model.project_matrix_raw(&x)?;
            let cols: Vec<Vec<f64>> = (0..model.k).map(|c| raw.column(c)).collect();
            st.add(
                format!("{REPORT_DIR}/pc_correlations.csv"),
                report::correlation_csv(&CorrelationMatrix::square(pc_labels(model.k), &cols)?),
            );
            produced.push("structure_loadings");
        }
    }

    let target_docs = match &cfg.paths.target {
        Some(p) if p.exists() => {
            st.input(p)?;
            Some(read_corpus(p)?)
        }
        _ => None,
    };
    if let (Some(model), Some(docs)) = (&model, &target_docs) {
        if (1..=model.k).all(|k| out.path(&scores_file(k)).exists()) {
            let mut per_doc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for k in 1..=model.k {
                let path = out.path(&scores_file(k));
                st.input(&path)?;
                for l in jsonl::read_pc_scores(&path)? {
                    per_doc.entry(l.id).or_default().push(l.score);
                }
            }
            let domains: BTreeMap<String, String> = docs
                .iter()
                .filter_map(|r| r.value.domain_tag.clone().map(|d| (r.value.id.clone(), d)))
                .collect();
            let ordered: Vec<(&str, &[f64])> = docs
                .iter()
                .filter_map(|r| per_doc.get(&r.value.id).map(|v| (r.value.id.as_str(), v.as_slice())))
                .collect();
            let dist = score_distribution_report(model.k, ordered, &domains)?;
            st.add(format!("{REPORT_DIR}/score_distribution.csv"), report::distribution_csv(&dist));
            produced.push("score_distribution");
        }
    }

    let mut distance_summary = serde_json::Value::Null;
    if let Some(emb_path) = &cfg.paths.embeddings {
        existing(emb_path, "check paths.embeddings")?;
        st.input(emb_path)?;
        let raw = jsonl::read_embeddings(emb_path)?;
        let processed = postprocess_embeddings(&raw, cfg.diagnostics.components_removed)?;
        let mut subsets = vec![("all".to_string(), processed.ids().to_vec())];
        let selected_path = out.path(SELECTED);
        if selected_path.exists() {
            st.input(&selected_path)?;
            let ids: Vec<String> = jsonl::read_values::<Document>(&selected_path)?
                .into_iter()
                .map(|d| d.id)
                .collect();
            subsets.push(("selected".to_string(), ids));
        }
        let rows = distance_rows(&processed, &subsets, cfg.diagnostics.sample_n, cfg.diagnostics.seed)?;
        st.add(format!("{REPORT_DIR}/pairwise_distance.csv"), report::distance_summary_csv(&rows));
        st.add(format!("{REPORT_DIR}/pairwise_distance_hist.csv"), report::distance_histogram_csv(&rows));
        st.add(
            format!("{REPORT_DIR}/embeddings_postprocessed.jsonl"),
            jsonl::embeddings_to_jsonl(&processed),
        );
        distance_summary = json!(rows
            .iter()
            .map(|(n, s, se)| json!({"subset": n, "mean": s.mean, "bootstrap_se": se}))
            .collect::<Vec<_>>());
        produced.push("pairwise_distance");
    }
    if produced.is_empty() {
        bail!("nothing to report: run earlier stages first or set paths.embeddings");
    }
    st.add(
        format!("{REPORT_DIR}/summary.json"),
        pretty(&json!({ "tables": produced, "distances": distance_summary })),
    );
    st.commit(json!({ "tables": produced }))
}
