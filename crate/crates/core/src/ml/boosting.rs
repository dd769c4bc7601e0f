use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::tree::{fit_newton, DecisionTree, Node, NewtonTreeParams};
use super::{BoostingParams, Matrix};
use crate::math::{ln, logistic, logit_loss};

/// Additive logit model `base + Σ tree(x)` with leaf values already shrunk by
/// the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub base_margin: f64,
    pub trees: Vec<DecisionTree>,
}

/// Weighted mean logistic loss of margins against labels.
pub fn weighted_logistic_loss(margins: &[f64], labels: &[bool], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((m, y), w) in margins.iter().zip(labels).zip(weights) {
        total += w * logit_loss(*m, *y);
        wsum += w;
    }
    total / wsum
}

impl BoostedTrees {
    /// Newton boosting on the (class-weighted) logistic loss. Returns the model
    /// and the training loss before the first round and after every round.
    pub fn fit(x: &Matrix, labels: &[bool], weights: &[f64], params: &BoostingParams) -> (Self, Vec<f64>) {
        let n = x.rows();
        let wsum: f64 = weights.iter().sum();
        let wpos: f64 = weights.iter().zip(labels).filter(|(_, &y)| y).map(|(w, _)| w).sum();
        let base_margin = ln(wpos / (wsum - wpos));
        let mut margins = vec![base_margin; n];
        let mut history = Vec::with_capacity(params.n_rounds + 1);
        history.push(weighted_logistic_loss(&margins, labels, weights));

        let tree_params = NewtonTreeParams {
            max_depth: params.max_depth,
            lambda: params.lambda,
            min_child_weight: params.min_child_weight,
        };
        let mut trees = Vec::with_capacity(params.n_rounds);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..params.n_rounds {
            for i in 0..n {
                let p = logistic(margins[i]);
                let y = if labels[i] { 1.0 } else { 0.0 };
                grad[i] = weights[i] * (p - y);
                hess[i] = weights[i] * (p * (1.0 - p)).max(1e-16);
            }
            let mut tree = fit_newton(x, &grad, &hess, tree_params);
            for node in &mut tree.nodes {
                if let Node::Leaf { value } = node {
                    *value *= params.learning_rate;
                }
            }
            for (i, m) in margins.iter_mut().enumerate() {
                *m += tree.predict(x.row(i));
            }
            history.push(weighted_logistic_loss(&margins, labels, weights));
            trees.push(tree);
        }
        (Self { base_margin, trees }, history)
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        logistic(self.margin(x))
    }
}
