use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Positive class = vulnerable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn actual_positive(&self) -> u64 {
        self.tp + self.fn_
    }

    /// F1 as an exact ratio `2tp / (2tp + fp + fn)`.
    pub fn f1_ratio(&self) -> (u64, u64) {
        (2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Accuracy as an exact ratio `(tp + tn) / total`.
    pub fn accuracy_ratio(&self) -> (u64, u64) {
        (self.tp + self.tn, self.total())
    }

    pub fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (true, true) => self.tp += 1,
        }
    }
}

/// Counts outcomes of paired labels and predictions.
pub fn confusion(truth: &[bool], predicted: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            labels: truth.len(),
            predictions: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub f1: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1, accuracy, recall and precision of the positive class, with 0/0 → 0.
pub fn f1_and_accuracy(cm: &ConfusionMatrix) -> Rates {
    let (f1n, f1d) = cm.f1_ratio();
    let (an, ad) = cm.accuracy_ratio();
    Rates {
        f1: ratio(f1n, f1d),
        accuracy: ratio(an, ad),
        recall: ratio(cm.tp, cm.tp + cm.fn_),
        precision: ratio(cm.tp, cm.tp + cm.fp),
    }
}

/// `num / den` rounded half-up to hundredths, computed exactly in integers.
/// Returns the number of hundredths (0.915 → 92).
pub fn round_half_up_2dp(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    (200 * num + den) / (2 * den)
}
