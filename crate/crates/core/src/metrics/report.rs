use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use super::{
    confusion, f1_and_accuracy, permutation_significance, round_half_up_2dp, ConfusionMatrix, FieldImportance,
    MetricsError, Statistic,
};
use crate::ml::{classify, ModelKind, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSettings {
    pub statistic: Statistic,
    pub n_permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SignificanceSettings {
    fn default() -> Self {
        Self {
            statistic: Statistic::F1,
            n_permutations: 999,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Test-split evaluation of one model. Rates are stored unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub kind: ModelKind,
    pub confusion: ConfusionMatrix,
    pub f1: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
    pub predicted_positive_count: u64,
    pub statistic: Statistic,
    pub n_permutations: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub significant_at_alpha: bool,
    /// Field-level ranking, most important first.
    #[serde(default)]
    pub importance: Option<Vec<FieldImportance>>,
}

impl EvaluationReport {
    pub fn row(&self) -> String {
        render_row(self.kind.display_name(), &self.confusion)
    }
}

/// Classifies the test rows with the model's threshold and assembles the
/// report, including a permutation significance test.
pub fn build_report(
    model: &TrainedModel,
    x: &crate::ml::Matrix,
    labels: &[bool],
    settings: SignificanceSettings,
) -> Result<EvaluationReport, MetricsError> {
    if x.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    let predicted = classify(model, x)?;
    let cm = confusion(labels, &predicted)?;
    let rates = f1_and_accuracy(&cm);
    let sig = permutation_significance(
        labels,
        &predicted,
        settings.statistic,
        settings.n_permutations,
        settings.alpha,
        settings.seed,
    )?;
    Ok(EvaluationReport {
        kind: model.kind,
        confusion: cm,
        f1: rates.f1,
        accuracy: rates.accuracy,
        recall: rates.recall,
        precision: rates.precision,
        threshold: model.threshold,
        predicted_positive_count: cm.predicted_positive(),
        statistic: sig.statistic,
        n_permutations: sig.n_permutations,
        p_value: sig.p_value,
        alpha: sig.alpha,
        significant_at_alpha: sig.significant,
        importance: None,
    })
}

fn hundredths(h: u64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

pub const TABLE_HEADER: &str = "Algorithm                  F1 Score  Accuracy    TN    FP    FN    TP";

/// Fixed-width table row: algorithm, F1, accuracy (both rounded half-up to
/// two decimals from the exact counts), TN, FP, FN, TP.
pub fn render_row(algorithm: &str, cm: &ConfusionMatrix) -> String {
    let (fnum, fden) = cm.f1_ratio();
    let (anum, aden) = cm.accuracy_ratio();
    format!(
        "{:<26} {:>8}  {:>8} {:>5} {:>5} {:>5} {:>5}",
        algorithm,
        hundredths(round_half_up_2dp(fnum, fden)),
        hundredths(round_half_up_2dp(anum, aden)),
        cm.tn,
        cm.fp,
        cm.fn_,
        cm.tp
    )
}

pub fn render_table<'a, I: IntoIterator<Item = &'a EvaluationReport>>(reports: I) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TABLE_HEADER}");
    for r in reports {
        let _ = writeln!(out, "{}", r.row());
    }
    out
}
