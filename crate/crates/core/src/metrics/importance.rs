use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{confusion, f1_and_accuracy, MetricsError};
use crate::ml::{classify, rank_desc, Matrix, TrainedModel};
use crate::rng::{derive_seed, stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    Recall,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldImportance {
    pub field: String,
    pub importance: f64,
}

fn metric(kind: ImportanceMetric, truth: &[bool], predicted: &[bool]) -> Result<f64, MetricsError> {
    let r = f1_and_accuracy(&confusion(truth, predicted)?);
    Ok(match kind {
        ImportanceMetric::Recall => r.recall,
        ImportanceMetric::F1 => r.f1,
    })
}

/// Mean metric drop when a field's columns are shuffled across rows (one-hot
/// groups move together), ranked descending with ties in layout order.
/// Repeat `r` of field `f` shuffles with the stream
/// `(seed, PERMUTATION_IMPORTANCE, mix(f, r))`.
pub fn permutation_feature_importance(
    model: &TrainedModel,
    x: &Matrix,
    labels: &[bool],
    metric_kind: ImportanceMetric,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<FieldImportance>, MetricsError> {
    if x.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    if labels.len() != x.rows() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: x.rows(),
        });
    }
    let baseline = metric(metric_kind, labels, &classify(model, x)?)?;
    let mut out: Vec<(String, f64)> = Vec::new();
    for (f, group) in model.layout.field_groups().into_iter().enumerate() {
        let mut drop_sum = 0.0;
        for r in 0..n_repeats {
            let mut order: Vec<usize> = (0..x.rows()).collect();
            let idx = derive_seed(f as u64, 0, r as u64);
            order.shuffle(&mut stream_rng(seed, stream::PERMUTATION_IMPORTANCE, idx));
            let mut permuted = x.clone();
            for (dst, &src) in order.iter().enumerate() {
                for c in group.positions.clone() {
                    permuted.row_mut(dst)[c] = x.get(src, c);
                }
            }
            let score = metric(metric_kind, labels, &classify(model, &permuted)?)?;
            drop_sum += baseline - score;
        }
        let importance = if n_repeats == 0 { 0.0 } else { drop_sum / n_repeats as f64 };
        out.push((group.field, importance));
    }
    rank_desc(&mut out);
    Ok(out
        .into_iter()
        .map(|(field, importance)| FieldImportance { field, importance })
        .collect())
}
