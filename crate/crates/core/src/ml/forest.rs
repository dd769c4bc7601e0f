use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_gini, DecisionTree, GiniTreeParams};
use super::{ForestParams, Matrix};
use crate::rng::{stream, stream_rng};

/// Bagged Gini trees; the score is the mean leaf probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Tree `t` draws its bootstrap sample and feature subsets from the
    /// stream `(seed, TREE, t)`.
    pub fn fit(x: &Matrix, labels: &[bool], weights: &[f64], params: &ForestParams, seed: u64) -> Self {
        let n = x.rows();
        let tree_params = GiniTreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            features_per_split: params.features_per_split,
        };
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = stream_rng(seed, stream::TREE, t as u64);
                let sample: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                fit_gini(x, labels, weights, sample, tree_params, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}
