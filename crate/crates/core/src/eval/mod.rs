//! Stratified splitting and imbalance-aware binary metrics.
//!
//! Positive class is WSSV. All metrics use the decision rule
//! `score >= threshold` and fold aggregates use the population standard
//! deviation.

mod io;
mod metrics;
mod split;

pub use io::{read_labeled_scores, render_table};
pub use metrics::{
    aggregate_folds, auc_roc, confusion, evaluate_folds, evaluate_run, f1_score, fnr,
    ConfusionMatrix, F1Score, FoldMetrics, LabeledScore, MetricTriple, MetricsSummary, Truth,
};
pub use split::{stratified_holdout, stratified_kfold, FoldPlan, SplitAssignment};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input error: {0}")]
    Input(String),
    #[error("stratification error for class `{class}`: {message}")]
    Stratification { class: String, message: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
