//! Orthogonal diversity-aware selection of pretraining data.
//!
//! Documents are scored on eleven quality dimensions, the score matrix of a
//! small reference set is decorrelated with a covariance PCA, one surrogate
//! scorer per retained component learns to predict that component from text,
//! and the target corpus is filled by taking the top-scored documents of every
//! component under a per-component token budget and uniting the subsets.
//!
//! This crate is `no_std` (it needs `alloc`) and does no IO. File formats,
//! the labeling transport and the command-line pipeline live in the `odis`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod decomposer;
pub mod diagnostics;
pub mod labeler;
pub mod linalg;
pub mod math;
pub mod model;
pub mod scorer;
pub mod selector;
pub mod stats;

pub use decomposer::{DecomposeError, PcaModel, PcaOptions, Rescale};
pub use model::{
    default_dimension_registry, CorpusSummary, DimensionCategory, DimensionSpec, Document,
    ModelError, ScoreMatrix, ScoreVector,
};
pub use scorer::{FeatureConfig, FeatureVector, PcScorer, SurrogateScorer};
pub use selector::{BudgetPlan, BudgetStrategy, SelectionResult};
