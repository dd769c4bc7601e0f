//! Linear soft-margin SVM trained by full-batch subgradient descent, with a
//! Platt sigmoid mapping margins to probabilities.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Matrix, StepSchedule, SvmParams};
use crate::math::{abs, exp, ln, softplus, sqrt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt: PlattScaling,
}

/// `P(vulnerable | margin) = 1 / (1 + exp(a * margin + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaling {
    pub a: f64,
    pub b: f64,
}

impl PlattScaling {
    pub fn probability(&self, margin: f64) -> f64 {
        crate::math::logistic(-(self.a * margin + self.b))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `0.5 ||w||² + (C / n) Σ c_i max(0, 1 - y_i (w·x_i + b))`.
pub fn svm_objective(x: &Matrix, labels: &[bool], weights: &[f64], c: f64, w: &[f64], b: f64) -> f64 {
    let n = x.rows() as f64;
    let hinge: f64 = x
        .iter_rows()
        .zip(labels)
        .zip(weights)
        .map(|((row, &pos), ci)| {
            let y = if pos { 1.0 } else { -1.0 };
            ci * (1.0 - y * (dot(w, row) + b)).max(0.0)
        })
        .sum();
    0.5 * dot(w, w) + c / n * hinge
}

impl LinearSvm {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.platt.probability(self.margin(x))
    }

    /// Returns the iterate with the lowest objective seen (subgradient steps
    /// are not monotone) and the objective after each epoch.
    pub fn fit(x: &Matrix, labels: &[bool], weights: &[f64], params: &SvmParams) -> (Self, Vec<f64>) {
        let (n, d) = (x.rows(), x.cols());
        let scale = params.c / n as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut best_w = w.clone();
        let mut best_b = b;
        let mut best_obj = svm_objective(x, labels, weights, params.c, &w, b);
        let mut history = Vec::with_capacity(params.epochs);
        let mut gw = vec![0.0; d];
        for epoch in 1..=params.epochs {
            gw.copy_from_slice(&w);
            let mut gb = 0.0;
            for ((row, &pos), ci) in x.iter_rows().zip(labels).zip(weights) {
                let y = if pos { 1.0 } else { -1.0 };
                if y * (dot(&w, row) + b) < 1.0 {
                    for (g, v) in gw.iter_mut().zip(row) {
                        *g -= scale * ci * y * v;
                    }
                    gb -= scale * ci * y;
                }
            }
            let eta = match params.schedule {
                StepSchedule::Constant => params.learning_rate,
                StepSchedule::InverseSqrt => params.learning_rate / sqrt(epoch as f64),
            };
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= eta * g;
            }
            b -= eta * gb;
            let obj = svm_objective(x, labels, weights, params.c, &w, b);
            history.push(obj);
            if obj < best_obj {
                best_obj = obj;
                best_w.copy_from_slice(&w);
                best_b = b;
            }
        }
        let margins: Vec<f64> = x.iter_rows().map(|r| dot(&best_w, r) + best_b).collect();
        let platt = fit_platt(&margins, labels);
        (
            Self {
                weights: best_w,
                bias: best_b,
                platt,
            },
            history,
        )
    }
}

/// Platt scaling with regularized targets, solved by Newton's method with
/// backtracking line search.
pub fn fit_platt(margins: &[f64], labels: &[bool]) -> PlattScaling {
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(f, t)| {
                let z = f * a + b;
                // t * z + ln(1 + e^{-z}), written stably
                if z >= 0.0 {
                    t * z + softplus(-z)
                } else {
                    (t - 1.0) * z + softplus(z)
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ln((n_neg + 1.0) / (n_pos + 1.0));
    let mut fval = objective(a, b);
    const SIGMA: f64 = 1e-12;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (f, t) in margins.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = exp(-z);
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = exp(z);
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if abs(g1) < 1e-5 && abs(g2) < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    PlattScaling { a, b }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn platt_orders_probabilities_by_margin() {
        let margins = [-2.0, -1.5, -1.0, -0.2, 0.3, 1.0, 1.4, 2.5];
        let labels = [false, false, false, true, false, true, true, true];
        let p = fit_platt(&margins, &labels);
        assert!(p.a < 0.0, "larger margins must mean higher probability");
        let probs: Vec<f64> = margins.iter().map(|m| p.probability(*m)).collect();
        assert!(probs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn objective_of_zero_model_is_mean_weighted_hinge() {
        let x = Matrix::from_rows(&[[1.0], [-1.0]]);
        let obj = svm_objective(&x, &[true, false], &[2.0, 1.0], 1.0, &[0.0], 0.0);
        assert_eq!(obj, 1.5);
    }
}
