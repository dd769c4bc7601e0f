//! Evaluation: confusion-matrix metrics, recall-first threshold selection,
//! permutation significance, permutation feature importance and report
//! assembly.

mod confusion;
mod importance;
mod report;
mod significance;
mod threshold;

use alloc::string::String;
use thiserror::Error;

pub use confusion::{confusion, f1_and_accuracy, round_half_up_2dp, ConfusionMatrix, Rates};
pub use importance::{permutation_feature_importance, FieldImportance, ImportanceMetric};
pub use report::{build_report, render_row, render_table, EvaluationReport, SignificanceSettings, TABLE_HEADER};
pub use significance::{permutation_significance, Significance, Statistic, MIN_PERMUTATIONS};
pub use threshold::{candidate_thresholds, select_threshold, ThresholdPolicy, DEFAULT_BUDGET};

use crate::ml::ModelError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{labels} labels vs {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("nothing to evaluate (zero rows)")]
    Empty,
    #[error("validation split has no vulnerable rows; regenerate the dataset with more rows or a different seed")]
    NoPositives,
    #[error("labels contain a single class; the permutation test is undefined")]
    SingleClass,
    #[error("at least {min} permutations required, got {got}")]
    TooFewPermutations { min: usize, got: usize },
    #[error("invalid threshold policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
