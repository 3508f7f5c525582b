//! Budget allocation, per-component thresholds and union construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::PcaModel;
use crate::math::floor;

/// Component count above which membership masks no longer fit a `u64`.
pub const MAX_COMPONENTS: usize = 64;
/// Up to this many components the UpSet table lists empty cells as well.
pub const FULL_UPSET_COMPONENTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("total budget must be positive")]
    ZeroBudget,
    #[error("need at least one component")]
    NoComponents,
    #[error("at most {MAX_COMPONENTS} components are supported, got {0}")]
    TooManyComponents(usize),
    #[error("budget weights must be finite, non-negative and not all zero")]
    BadWeights,
    #[error("score for {id} is not finite")]
    NonFiniteScore { id: String },
    #[error("plan has {plan} components but {streams} score streams were given")]
    ComponentMismatch { plan: usize, streams: usize },
    #[error("id {id} is scored for component {present} but not for component {missing}")]
    InconsistentIds {
        id: String,
        present: usize,
        missing: usize,
    },
    #[error("id {id} appears twice in the scores of component {component}")]
    DuplicateId { id: String, component: usize },
    #[error("id {0} has no token count")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStrategy {
    Uniform,
    VarianceProportional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub total: u64,
    pub per_dim: Vec<u64>,
    pub strategy: BudgetStrategy,
}

/// Splits `total` tokens over components. Proportional shares follow
/// `weights` (the retained eigenvalues); both strategies round by largest
/// remainder, the lower index winning ties, so the shares sum to `total`.
pub fn allocate_budget(total: u64, weights: &[f64], strategy: BudgetStrategy) -> Result<BudgetPlan, SelectError> {
    let k = weights.len();
    if total == 0 {
        return Err(SelectError::ZeroBudget);
    }
    if k == 0 {
        return Err(SelectError::NoComponents);
    }
    let per_dim = match strategy {
        BudgetStrategy::Uniform => {
            let base = total / k as u64;
            let extra = (total % k as u64) as usize;
            (0..k).map(|i| base + u64::from(i < extra)).collect()
        }
        BudgetStrategy::VarianceProportional => {
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(SelectError::BadWeights);
            }
            let sum: f64 = weights.iter().sum();
            if sum <= 0.0 {
                return Err(SelectError::BadWeights);
            }
            let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
            largest_remainder(total, &quotas)
        }
    };
    Ok(BudgetPlan {
        total,
        per_dim,
        strategy,
    })
}

pub fn allocate_for_model(total: u64, model: &PcaModel, strategy: BudgetStrategy) -> Result<BudgetPlan, SelectError> {
    allocate_budget(total, &model.eigenvalues[..model.k], strategy)
}

fn largest_remainder(total: u64, quotas: &[f64]) -> Vec<u64> {
    let mut shares: Vec<u64> = quotas.iter().map(|q| floor(*q) as u64).collect();
    let mut assigned: u64 = shares.iter().sum();
    // Float rounding could in principle overshoot; trim from the end.
    let mut i = shares.len();
    while assigned > total && i > 0 {
        i -= 1;
        let cut = shares[i].min(assigned - total);
        shares[i] -= cut;
        assigned -= cut;
    }
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - floor(quotas[a]);
        let fb = quotas[b] - floor(quotas[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total - assigned;
    for idx in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        shares[*idx] += 1;
        remaining -= 1;
    }
    shares
}

/// A document's score on one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc<'a> {
    pub id: &'a str,
    pub score: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    /// Score of the last selected document; `+∞` when nothing is selected.
    pub threshold: f64,
    /// Selected ids in rank order.
    pub selected: Vec<String>,
    pub tokens: u64,
}

/// Ranking used everywhere: score descending, then id ascending.
pub fn rank_order(a: &ScoredDoc<'_>, b: &ScoredDoc<'_>) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(b.id))
}

/// Takes the longest prefix of the ranking whose tokens fit in `budget`.
pub fn compute_threshold(scored: &[ScoredDoc<'_>], budget: u64) -> Result<Threshold, SelectError> {
    if let Some(bad) = scored.iter().find(|d| !d.score.is_finite()) {
        return Err(SelectError::NonFiniteScore { id: bad.id.into() });
    }
    let mut ranked: Vec<&ScoredDoc<'_>> = scored.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let mut tokens = 0u64;
    let mut selected = Vec::new();
    let mut threshold = f64::INFINITY;
    for d in ranked {
        let next = tokens.saturating_add(d.tokens);
        if next > budget {
            break;
        }
        tokens = next;
        threshold = d.score;
        selected.push(String::from(d.id));
    }
    Ok(Threshold {
        threshold,
        selected,
        tokens,
    })
}

/// Document membership in the per-component subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub id: String,
    /// Bit `k` set when component `k` selected the document.
    pub mask: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    /// `[a][b]`: documents selected by both `a` and `b` (diagonal: subset size).
    pub pairwise_docs: Vec<Vec<u64>>,
    /// `[a][b]`: token-weighted Jaccard `|A∩B| / |A∪B|`.
    pub pairwise_token_ratio: Vec<Vec<f64>>,
    /// Documents selected by every component.
    pub all_components_docs: u64,
    /// Union documents selected by at least two components.
    pub shared_docs: u64,
    pub shared_tokens: u64,
    /// `shared_docs / |union|`.
    pub overlap_ratio_docs: f64,
    /// `shared_tokens / union tokens`.
    pub overlap_ratio_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub budgets: Vec<u64>,
    pub thresholds: Vec<f64>,
    /// Per-component selections in rank order.
    pub per_dim_ids: Vec<Vec<String>>,
    pub per_dim_tokens: Vec<u64>,
    /// Union members sorted by id.
    pub memberships: Vec<Membership>,
    pub union_tokens: u64,
    pub overlap: OverlapStats,
}

impl SelectionResult {
    pub fn n_components(&self) -> usize {
        self.per_dim_ids.len()
    }

    /// Deduplicated union, sorted by id.
    pub fn union_ids(&self) -> Vec<&str> {
        self.memberships.iter().map(|m| m.id.as_str()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.memberships
            .binary_search_by(|m| m.id.as_str().cmp(id))
            .is_ok()
    }
}

/// Runs [`compute_threshold`] per component and unites the subsets.
///
/// `per_dim_scores[k]` holds `(id, θ_k)` for every target document; all
/// components must score the same id set.
pub fn select<S: AsRef<str>>(
    plan: &BudgetPlan,
    per_dim_scores: &[Vec<(S, f64)>],
    tokens: &BTreeMap<String, u64>,
) -> Result<SelectionResult, SelectError> {
    let k = plan.per_dim.len();
    if per_dim_scores.len() != k {
        return Err(SelectError::ComponentMismatch {
            plan: k,
            streams: per_dim_scores.len(),
        });
    }
    if k == 0 {
        return Err(SelectError::NoComponents);
    }
    if k > MAX_COMPONENTS {
        return Err(SelectError::TooManyComponents(k));
    }
    let reference: BTreeSet<&str> = id_set(&per_dim_scores[0], 0)?;
    for (c, stream) in per_dim_scores.iter().enumerate().skip(1) {
        let ids = id_set(stream, c)?;
        if let Some(extra) = ids.difference(&reference).next() {
            return Err(SelectError::InconsistentIds {
                id: (*extra).into(),
                present: c,
                missing: 0,
            });
        }
        if let Some(missing) = reference.difference(&ids).next() {
            return Err(SelectError::InconsistentIds {
                id: (*missing).into(),
                present: 0,
                missing: c,
            });
        }
    }
    for id in &reference {
        if !tokens.contains_key(*id) {
            return Err(SelectError::UnknownId((*id).into()));
        }
    }

    let mut thresholds = Vec::with_capacity(k);
    let mut per_dim_ids = Vec::with_capacity(k);
    let mut per_dim_tokens = Vec::with_capacity(k);
    let mut masks: BTreeMap<&str, u64> = BTreeMap::new();
    for (c, stream) in per_dim_scores.iter().enumerate() {
        let scored: Vec<ScoredDoc<'_>> = stream
            .iter()
            .map(|(id, s)| ScoredDoc {
                id: id.as_ref(),
                score: *s,
                tokens: tokens[id.as_ref()],
            })
            .collect();
        let t = compute_threshold(&scored, plan.per_dim[c])?;
        for id in &t.selected {
            let key = reference.get(id.as_str()).expect("validated id");
            *masks.entry(key).or_insert(0) |= 1u64 << c;
        }
        thresholds.push(t.threshold);
        per_dim_tokens.push(t.tokens);
        per_dim_ids.push(t.selected);
    }

    let memberships: Vec<Membership> = masks
        .into_iter()
        .map(|(id, mask)| Membership {
            id: id.into(),
            mask,
            tokens: tokens[id],
        })
        .collect();
    let union_tokens = memberships.iter().map(|m| m.tokens).sum();
    let overlap = overlap_stats(&memberships, k);
    Ok(SelectionResult {
        budgets: plan.per_dim.clone(),
        thresholds,
        per_dim_ids,
        per_dim_tokens,
        memberships,
        union_tokens,
        overlap,
    })
}

fn id_set<S: AsRef<str>>(stream: &[(S, f64)], component: usize) -> Result<BTreeSet<&str>, SelectError> {
    let mut set = BTreeSet::new();
    for (id, _) in stream {
        if !set.insert(id.as_ref()) {
            return Err(SelectError::DuplicateId {
                id: id.as_ref().into(),
                component,
            });
        }
    }
    Ok(set)
}

fn overlap_stats(memberships: &[Membership], k: usize) -> OverlapStats {
    let mut pair_docs = vec![vec![0u64; k]; k];
    let mut pair_tokens = vec![vec![0u64; k]; k];
    let mut union_pair_tokens = vec![vec![0u64; k]; k];
    let full = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let mut all = 0;
    let mut shared_docs = 0;
    let mut shared_tokens = 0;
    let mut union_tokens = 0;
    for m in memberships {
        union_tokens += m.tokens;
        if m.mask.count_ones() >= 2 {
            shared_docs += 1;
            shared_tokens += m.tokens;
        }
        if m.mask == full {
            all += 1;
        }
        for a in 0..k {
            let in_a = m.mask >> a & 1 == 1;
            for b in 0..k {
                let in_b = m.mask >> b & 1 == 1;
                if in_a && in_b {
                    pair_docs[a][b] += 1;
                    pair_tokens[a][b] += m.tokens;
                }
                if in_a || in_b {
                    union_pair_tokens[a][b] += m.tokens;
                }
            }
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let pairwise_token_ratio = (0..k)
        .map(|a| (0..k).map(|b| ratio(pair_tokens[a][b], union_pair_tokens[a][b])).collect())
        .collect();
    OverlapStats {
        pairwise_docs: pair_docs,
        pairwise_token_ratio,
        all_components_docs: all,
        shared_docs,
        shared_tokens,
        overlap_ratio_docs: ratio(shared_docs, memberships.len() as u64),
        overlap_ratio_tokens: ratio(shared_tokens, union_tokens),
    }
}

/// One UpSet intersection: documents selected by exactly `components`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsetCell {
    /// Zero-based component indices.
    pub components: Vec<usize>,
    pub docs: u64,
    pub tokens: u64,
}

/// Exclusive-intersection counts. Every non-empty component subset is listed
/// (in mask order) when there are at most [`FULL_UPSET_COMPONENTS`]
/// components, otherwise only populated ones. Cells partition the union.
pub fn overlap_report(result: &SelectionResult) -> Vec<UpsetCell> {
    let k = result.n_components();
    let mut cells: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    if k <= FULL_UPSET_COMPONENTS {
        for mask in 1..(1u64 << k) {
            cells.insert(mask, (0, 0));
        }
    }
    for m in &result.memberships {
        let e = cells.entry(m.mask).or_insert((0, 0));
        e.0 += 1;
        e.1 += m.tokens;
    }
    cells
        .into_iter()
        .map(|(mask, (docs, tokens))| UpsetCell {
            components: (0..k).filter(|c| mask >> c & 1 == 1).collect(),
            docs,
            tokens,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    fn docs<'a>(ids: &'a [String], scores: &[f64], tokens: &[u64]) -> Vec<ScoredDoc<'a>> {
        ids.iter()
            .zip(scores)
            .zip(tokens)
            .map(|((id, &score), &tokens)| ScoredDoc {
                id: id.as_str(),
                score,
                tokens,
            })
            .collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    #[test]
    fn uniform_budget() {
        let p = allocate_budget(100, &[1.0; 4], BudgetStrategy::Uniform).unwrap();
        assert_eq!(p.per_dim, vec![25, 25, 25, 25]);
        let p = allocate_budget(10, &[5.0, 1.0, 1.0], BudgetStrategy::Uniform).unwrap();
        assert_eq!(p.per_dim, vec![4, 3, 3]);
    }

    #[test]
    fn proportional_budget() {
        let p = allocate_budget(100, &[4.0, 3.0, 2.0, 1.0], BudgetStrategy::VarianceProportional).unwrap();
        assert_eq!(p.per_dim, vec![40, 30, 20, 10]);
        let p = allocate_budget(10, &[1.0, 1.0, 1.0], BudgetStrategy::VarianceProportional).unwrap();
        assert_eq!(p.per_dim, vec![4, 3, 3]);
        let p = allocate_budget(7, &[2.0, 1.0], BudgetStrategy::VarianceProportional).unwrap();
        assert_eq!(p.per_dim.iter().sum::<u64>(), 7);
        assert_eq!(p.per_dim, vec![5, 2]);
    }

    #[test]
    fn budget_errors() {
        assert_eq!(
            allocate_budget(0, &[1.0], BudgetStrategy::Uniform),
            Err(SelectError::ZeroBudget)
        );
        assert_eq!(
            allocate_budget(5, &[], BudgetStrategy::Uniform),
            Err(SelectError::NoComponents)
        );
        assert_eq!(
            allocate_budget(5, &[0.0, 0.0], BudgetStrategy::VarianceProportional),
            Err(SelectError::BadWeights)
        );
    }

    #[test]
    fn greedy_prefix_example() {
        let id = ids(5);
        let d = docs(&id, &[5.0, 4.0, 3.0, 2.0, 1.0], &[10; 5]);
        let t = compute_threshold(&d, 25).unwrap();
        assert_eq!(t.selected, vec!["d0", "d1"]);
        assert_eq!(t.threshold, 4.0);
        assert_eq!(t.tokens, 20);
    }

    #[test]
    fn budget_exceeding_pool_selects_all() {
        let id = ids(4);
        let d = docs(&id, &[0.5, 3.0, 2.0, 1.0], &[7, 1, 2, 3]);
        let t = compute_threshold(&d, 1000).unwrap();
        assert_eq!(t.selected.len(), 4);
        assert_eq!(t.threshold, 0.5);
    }

    #[test]
    fn ties_break_by_id() {
        let id: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let d = docs(&id, &[2.0; 3], &[10; 3]);
        let t = compute_threshold(&d, 15).unwrap();
        assert_eq!(t.selected, vec!["a"]);
    }

    #[test]
    fn zero_budget_or_oversized_head_selects_nothing() {
        let id = ids(2);
        let d = docs(&id, &[1.0, 0.0], &[10, 1]);
        let t = compute_threshold(&d, 0).unwrap();
        assert!(t.selected.is_empty());
        assert_eq!(t.threshold, f64::INFINITY);
        let t = compute_threshold(&d, 5).unwrap();
        assert!(t.selected.is_empty());
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let id = ids(2);
        let d = docs(&id, &[f64::NAN, 0.0], &[1, 1]);
        assert!(matches!(
            compute_threshold(&d, 5),
            Err(SelectError::NonFiniteScore { .. })
        ));
    }

    fn token_index(n: usize, t: u64) -> BTreeMap<String, u64> {
        ids(n).into_iter().map(|i| (i, t)).collect()
    }

    #[test]
    fn disjoint_and_identical_selections() {
        let id = ids(4);
        let tokens = token_index(4, 10);
        let a: Vec<(String, f64)> = id.iter().cloned().zip([4.0, 3.0, 0.0, 0.0]).collect();
        let b: Vec<(String, f64)> = id.iter().cloned().zip([0.0, 0.0, 4.0, 3.0]).collect();
        let plan = allocate_budget(40, &[1.0, 1.0], BudgetStrategy::Uniform).unwrap();
        let r = select(&plan, &[a.clone(), b], &tokens).unwrap();
        assert_eq!(r.memberships.len(), 4);
        assert_eq!(r.overlap.overlap_ratio_tokens, 0.0);
        let cells = overlap_report(&r);
        assert_eq!(cells.len(), 3);
        assert_eq!((cells[0].components.clone(), cells[0].docs), (vec![0], 2));
        assert_eq!((cells[1].components.clone(), cells[1].docs), (vec![1], 2));
        assert_eq!((cells[2].components.clone(), cells[2].docs), (vec![0, 1], 0));

        let r = select(&plan, &[a.clone(), a], &tokens).unwrap();
        assert_eq!(r.union_ids(), vec!["d0", "d1"]);
        assert_eq!(r.overlap.pairwise_token_ratio[0][1], 1.0);
        assert_eq!(r.overlap.overlap_ratio_tokens, 1.0);
        let cells = overlap_report(&r);
        assert_eq!(cells.iter().map(|c| c.docs).collect::<Vec<_>>(), vec![0, 0, 2]);
    }

    #[test]
    fn inconsistent_streams_are_rejected() {
        let tokens = token_index(3, 1);
        let a = vec![("d0".to_string(), 1.0), ("d1".to_string(), 2.0)];
        let b = vec![("d0".to_string(), 1.0), ("d2".to_string(), 2.0)];
        let plan = allocate_budget(2, &[1.0, 1.0], BudgetStrategy::Uniform).unwrap();
        assert!(matches!(
            select(&plan, &[a.clone(), b], &tokens),
            Err(SelectError::InconsistentIds { .. })
        ));
        let c = vec![("d0".to_string(), 1.0), ("zz".to_string(), 2.0)];
        assert!(matches!(
            select(&plan, &[c.clone(), c], &tokens),
            Err(SelectError::UnknownId(_))
        ));
        assert!(matches!(
            select(&plan, &[a], &tokens),
            Err(SelectError::ComponentMismatch { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn scaling_scores_keeps_selection(
            scores in proptest::collection::vec(0.0f64..5.0, 1..60),
            tokens in proptest::collection::vec(1u64..50, 60),
            budget in 0u64..800,
            factor in 0.01f64..100.0,
        ) {
            let id = ids(scores.len());
            let d = docs(&id, &scores, &tokens[..scores.len()]);
            let scaled: Vec<f64> = scores.iter().map(|s| s * factor).collect();
            let ds = docs(&id, &scaled, &tokens[..scores.len()]);
            let a = compute_threshold(&d, budget).unwrap();
            let b = compute_threshold(&ds, budget).unwrap();
            proptest::prop_assert_eq!(a.selected, b.selected);
        }

        #[test]
        fn proportional_budgets_sum_to_total(
            total in 1u64..10_000_000,
            weights in proptest::collection::vec(0.001f64..100.0, 1..12),
        ) {
            let p = allocate_budget(total, &weights, BudgetStrategy::VarianceProportional).unwrap();
            proptest::prop_assert_eq!(p.per_dim.iter().sum::<u64>(), total);
            let u = allocate_budget(total, &weights, BudgetStrategy::Uniform).unwrap();
            proptest::prop_assert_eq!(u.per_dim.iter().sum::<u64>(), total);
        }
    }
}
