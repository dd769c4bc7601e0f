//! Binary decision trees: Gini-impurity CART for the forest and
//! gradient/Hessian regression trees for boosting.
//!
//! Splits send `x[feature] < threshold` left. Candidate thresholds are the
//! midpoints between consecutive distinct values of a feature. Among equal
//! gains the lowest feature index wins, then the lowest threshold.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

/// Gains within this margin count as ties.
pub const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Impurity decrease credited to `feature` (already weighted by the
        /// node's share of samples for Gini trees; raw loss gain for boosting).
        importance: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    /// Summed split importance per feature.
    pub fn importances(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for n in &self.nodes {
            if let Node::Split { feature, importance, .. } = n {
                out[*feature] += importance;
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Root split as `(feature, threshold)`, if the tree is not a single leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

/// Midpoint strictly above `lo` and at most `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t > lo {
        t
    } else {
        hi
    }
}

fn sorted_by_feature(x: &Matrix, sample: &[usize], feature: usize) -> Vec<usize> {
    let mut idx = sample.to_vec();
    idx.sort_by(|&a, &b| x.get(a, feature).total_cmp(&x.get(b, feature)).then(a.cmp(&b)));
    idx
}

/// Gini impurity `2p(1-p)` of a node with total weight `w` and positive weight `wp`.
pub fn gini(w: f64, wp: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let p = wp / w;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy)]
pub struct GiniTreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn (without replacement) at each node; clamped to the
    /// number of columns.
    pub features_per_split: usize,
}

struct GiniBuilder<'a, R> {
    x: &'a Matrix,
    labels: &'a [bool],
    weights: &'a [f64],
    params: GiniTreeParams,
    root_weight: f64,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> GiniBuilder<'_, R> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let n = self.x.cols();
        let k = self.params.features_per_split.clamp(1, n.max(1));
        let mut all: Vec<usize> = (0..n).collect();
        if k < n {
            for i in 0..k {
                let j = self.rng.gen_range(i..n);
                all.swap(i, j);
            }
            all.truncate(k);
            all.sort_unstable();
        }
        all
    }

    fn totals(&self, sample: &[usize]) -> (f64, f64) {
        sample.iter().fold((0.0, 0.0), |(w, wp), &i| {
            let wi = self.weights[i];
            (w + wi, if self.labels[i] { wp + wi } else { wp })
        })
    }

    fn best_split(&mut self, sample: &[usize], w: f64, wp: f64) -> Option<BestSplit> {
        let parent = gini(w, wp);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        for f in self.candidate_features() {
            let order = sorted_by_feature(self.x, sample, f);
            let (mut lw, mut lwp) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                lw += self.weights[i];
                if self.labels[i] {
                    lwp += self.weights[i];
                }
                let (a, b) = (self.x.get(i, f), self.x.get(order[k + 1], f));
                let n_left = k + 1;
                if a == b || n_left < min_leaf || order.len() - n_left < min_leaf {
                    continue;
                }
                let (rw, rwp) = (w - lw, wp - lwp);
                let gain = parent - (lw / w) * gini(lw, lwp) - (rw / w) * gini(rw, rwp);
                if best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > GAIN_EPS)
    }

    fn grow(&mut self, sample: Vec<usize>, depth: usize) -> usize {
        let (w, wp) = self.totals(&sample);
        let at = self.nodes.len();
        let leaf_value = if w > 0.0 { wp / w } else { 0.0 };
        self.nodes.push(Node::Leaf { value: leaf_value });
        let pure = wp <= 0.0 || wp >= w;
        if depth >= self.params.max_depth || pure || sample.len() < 2 * self.params.min_samples_leaf.max(1) {
            return at;
        }
        let Some(best) = self.best_split(&sample, w, wp) else {
            return at;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = sample
            .iter()
            .partition(|&&i| self.x.get(i, best.feature) < best.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
            importance: (w / self.root_weight) * best.gain,
        };
        at
    }
}

/// Grows a Gini classification tree on `sample` (row indices, repeats allowed
/// for bootstrap draws). Leaves hold the weighted positive fraction.
pub fn fit_gini<R: Rng>(
    x: &Matrix,
    labels: &[bool],
    weights: &[f64],
    sample: Vec<usize>,
    params: GiniTreeParams,
    rng: &mut R,
) -> DecisionTree {
    let root_weight: f64 = sample.iter().map(|&i| weights[i]).sum();
    let mut b = GiniBuilder {
        x,
        labels,
        weights,
        params,
        root_weight,
        rng,
        nodes: Vec::new(),
    };
    b.grow(sample, 0);
    DecisionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonTreeParams {
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum Hessian sum per child.
    pub min_child_weight: f64,
}

struct NewtonBuilder<'a> {
    x: &'a Matrix,
    grad: &'a [f64],
    hess: &'a [f64],
    params: NewtonTreeParams,
    nodes: Vec<Node>,
}

impl NewtonBuilder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn grow(&mut self, sample: Vec<usize>, depth: usize) -> usize {
        let (g, h) = sample
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: -g / (h + self.params.lambda),
        });
        if depth >= self.params.max_depth || sample.len() < 2 {
            return at;
        }
        let parent = self.score(g, h);
        let mut best: Option<BestSplit> = None;
        for f in 0..self.x.cols() {
            let order = sorted_by_feature(self.x, &sample, f);
            let (mut lg, mut lh) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                lg += self.grad[i];
                lh += self.hess[i];
                let (a, b) = (self.x.get(i, f), self.x.get(order[k + 1], f));
                let (rg, rh) = (g - lg, h - lh);
                if a == b || lh < self.params.min_child_weight || rh < self.params.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (self.score(lg, lh) + self.score(rg, rh) - parent);
                if best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        let Some(best) = best.filter(|b| b.gain > GAIN_EPS) else {
            return at;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = sample
            .iter()
            .partition(|&&i| self.x.get(i, best.feature) < best.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
            importance: best.gain,
        };
        at
    }
}

/// Grows a second-order regression tree: leaf weight `-G / (H + lambda)`,
/// split gain `(G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)) / 2`.
pub fn fit_newton(x: &Matrix, grad: &[f64], hess: &[f64], params: NewtonTreeParams) -> DecisionTree {
    let mut b = NewtonBuilder {
        x,
        grad,
        hess,
        params,
        nodes: Vec::new(),
    };
    b.grow((0..x.rows()).collect(), 0);
    DecisionTree { nodes: b.nodes }
}
