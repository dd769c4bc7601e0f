use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{confusion, f1_and_accuracy, MetricsError};
use crate::rng::{stream, stream_rng};

pub const MIN_PERMUTATIONS: usize = 999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    F1,
    Recall,
}

impl Statistic {
    fn eval(self, truth: &[bool], predicted: &[bool]) -> f64 {
        let cm = confusion(truth, predicted).expect("lengths checked by caller");
        let r = f1_and_accuracy(&cm);
        match self {
            Statistic::F1 => r.f1,
            Statistic::Recall => r.recall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub statistic: Statistic,
    pub observed: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub n_permutations: usize,
    /// `p_value < alpha`.
    pub significant: bool,
}

/// One-sided permutation test of a fixed prediction vector against the true
/// labels: `p = (1 + #{permuted >= observed}) / (n_permutations + 1)`, where
/// trial `k` shuffles the labels with the stream `(seed, PERMUTATION_TEST, k)`.
pub fn permutation_significance(
    truth: &[bool],
    predicted: &[bool],
    statistic: Statistic,
    n_permutations: usize,
    alpha: f64,
    seed: u64,
) -> Result<Significance, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            labels: truth.len(),
            predictions: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if n_permutations < MIN_PERMUTATIONS {
        return Err(MetricsError::TooFewPermutations {
            min: MIN_PERMUTATIONS,
            got: n_permutations,
        });
    }
    let positives = truth.iter().filter(|&&y| y).count();
    if positives == 0 || positives == truth.len() {
        return Err(MetricsError::SingleClass);
    }
    let observed = statistic.eval(truth, predicted);
    let mut shuffled: Vec<bool> = truth.to_vec();
    let mut at_least = 0usize;
    for k in 0..n_permutations {
        shuffled.copy_from_slice(truth);
        shuffled.shuffle(&mut stream_rng(seed, stream::PERMUTATION_TEST, k as u64));
        if statistic.eval(&shuffled, predicted) >= observed {
            at_least += 1;
        }
    }
    Ok(Significance::from_count(statistic, observed, at_least, n_permutations, alpha))
}

impl Significance {
    pub fn from_count(statistic: Statistic, observed: f64, at_least: usize, n_permutations: usize, alpha: f64) -> Self {
        let p_value = (1 + at_least) as f64 / (n_permutations + 1) as f64;
        Self {
            statistic,
            observed,
            p_value,
            alpha,
            n_permutations,
            significant: p_value < alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_significant() {
        let mut truth = alloc::vec![false; 200];
        truth[..17].iter_mut().for_each(|v| *v = true);
        let s = permutation_significance(&truth, &truth, Statistic::F1, 999, 0.05, 1).unwrap();
        assert_eq!(s.p_value, 1.0 / 1000.0);
        assert!(s.significant);
    }

    #[test]
    fn p_equal_to_alpha_is_not_significant() {
        // 49 of 999 permutations at least as extreme -> p = 50 / 1000 = 0.05
        let s = Significance::from_count(Statistic::Recall, 0.5, 49, 999, 0.05);
        assert_eq!(s.p_value, 0.05);
        assert!(!s.significant);
    }

    #[test]
    fn rejects_small_permutation_counts_and_single_class() {
        let t = [true, false, true];
        assert!(matches!(
            permutation_significance(&t, &t, Statistic::F1, 100, 0.05, 0),
            Err(MetricsError::TooFewPermutations { .. })
        ));
        assert_eq!(
            permutation_significance(&[true; 4], &[true; 4], Statistic::F1, 999, 0.05, 0).unwrap_err(),
            MetricsError::SingleClass
        );
    }
}
