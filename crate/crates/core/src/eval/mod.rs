//! Patch-level evaluation: ROC and precision-recall curves with AUC and AP,
//! and the shape-feature + extremely-randomized-trees baseline.

mod compare;
mod curves;
mod features;
mod forest;

use std::path::PathBuf;

use thiserror::Error;

pub use compare::{
    baseline_scores, compare_methods, read_curve_csv, read_summary, write_comparison, Comparison, SummaryRow, BASELINE_METHOD,
    CNN_METHOD,
};
pub use curves::{evaluate, pr_curve, roc_curve, CurveReport, PrCurve, PrPoint, RocCurve, RocPoint, ScoredSet};
pub use features::{otsu_threshold, shape_features, ShapeFeatures, FEATURE_COUNT, FEATURE_NAMES, FEATURE_SET_VERSION};
pub use forest::{ExtraTreesConfig, Forest};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score sets disagree on the label of item {0}")]
    LabelMismatch(usize),
    #[error("curve needs both classes present")]
    SingleClass,
    #[error("no positive examples")]
    NoPositives,
    #[error("score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("feature rows have inconsistent width")]
    RaggedFeatures,
    #[error("malformed export {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
