use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, MetricsError};

/// Budget used when none is configured: 30 predicted positives per 200 rows.
pub const DEFAULT_BUDGET: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdPolicy {
    /// Fewest false negatives among thresholds flagging at most `budget` rows.
    FnMinUnderBudget { budget: u64 },
    MaxF1,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::FnMinUnderBudget { budget: DEFAULT_BUDGET }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<(), MetricsError> {
        match self {
            ThresholdPolicy::FnMinUnderBudget { budget: 0 } => {
                Err(MetricsError::Policy("budget must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Sentinels 0 and 1 plus midpoints between consecutive distinct scores,
/// ascending.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(0.0);
    for w in sorted.windows(2) {
        out.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn confusion_at(scores: &[f64], labels: &[bool], t: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        cm.add(y, s >= t);
    }
    cm
}

/// `f1` as a comparable exact fraction.
fn f1_cmp(a: &ConfusionMatrix, b: &ConfusionMatrix) -> core::cmp::Ordering {
    let (an, ad) = a.f1_ratio();
    let (bn, bd) = b.f1_ratio();
    // 0/0 counts as 0
    let (an, ad) = if ad == 0 { (0, 1) } else { (an, ad) };
    let (bn, bd) = if bd == 0 { (0, 1) } else { (bn, bd) };
    (u128::from(an) * u128::from(bd)).cmp(&(u128::from(bn) * u128::from(ad)))
}

/// Picks a decision threshold on validation scores.
///
/// `FnMinUnderBudget`: among candidates flagging at most `budget` rows,
/// minimal false negatives, then higher F1, then higher threshold. If no
/// candidate fits the budget, the candidate flagging the fewest rows is used.
/// `MaxF1`: maximal F1, then higher threshold.
pub fn select_threshold(scores: &[f64], labels: &[bool], policy: ThresholdPolicy) -> Result<f64, MetricsError> {
    policy.validate()?;
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: scores.len(),
        });
    }
    if !labels.iter().any(|&y| y) {
        return Err(MetricsError::NoPositives);
    }
    let evaluated: Vec<(f64, ConfusionMatrix)> = candidate_thresholds(scores)
        .into_iter()
        .map(|t| (t, confusion_at(scores, labels, t)))
        .collect();
    // Candidates ascend, so on full ties the later one (higher threshold) wins.
    let better = |cand: &(f64, ConfusionMatrix), best: &(f64, ConfusionMatrix)| -> bool {
        use core::cmp::Ordering::*;
        match policy {
            ThresholdPolicy::FnMinUnderBudget { .. } => match best.1.fn_.cmp(&cand.1.fn_) {
                Greater => true,
                Less => false,
                Equal => f1_cmp(&cand.1, &best.1) != Less,
            },
            ThresholdPolicy::MaxF1 => f1_cmp(&cand.1, &best.1) != Less,
        }
    };
    let feasible: Vec<&(f64, ConfusionMatrix)> = match policy {
        ThresholdPolicy::FnMinUnderBudget { budget } => evaluated
            .iter()
            .filter(|(_, cm)| cm.predicted_positive() <= budget)
            .collect(),
        ThresholdPolicy::MaxF1 => evaluated.iter().collect(),
    };
    if feasible.is_empty() {
        // Only possible when even t = 1 flags more than the budget.
        let fewest = evaluated
            .iter()
            .min_by(|a, b| a.1.predicted_positive().cmp(&b.1.predicted_positive()).then(b.0.total_cmp(&a.0)))
            .expect("sentinels always present");
        return Ok(fewest.0);
    }
    let mut best = feasible[0];
    for cand in &feasible[1..] {
        if better(cand, best) {
            best = cand;
        }
    }
    Ok(best.0)
}
