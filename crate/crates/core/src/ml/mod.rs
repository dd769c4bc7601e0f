//! The five classifier families and their shared train / score / classify
//! surface.
//!
//! Every model standardizes features with constants fitted on its training
//! rows, produces a positive-class probability in `[0, 1]`, and carries the
//! decision threshold that [`classify`] applies. Training is deterministic in
//! `(rows, hyperparameters, seed)`.

pub mod boosting;
pub mod forest;
mod matrix;
pub mod nn;
pub mod preprocess;
pub mod svm;
pub mod tree;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::Matrix;

use crate::fingerprint::TableHasher;
use crate::layout::FeatureLayout;
use boosting::BoostedTrees;
use forest::RandomForest;
use nn::{train_network, DescentSettings, Network};
use preprocess::Standardizer;
use svm::LinearSvm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSvm,
    RandomForest,
    GradientBoostedTrees,
    Mlp,
    SequentialNn,
}

impl ModelKind {
    /// Report order.
    pub const ALL: [ModelKind; 5] = [
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::GradientBoostedTrees,
        ModelKind::Mlp,
        ModelKind::SequentialNn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoostedTrees => "gradient_boosted_trees",
            ModelKind::Mlp => "mlp",
            ModelKind::SequentialNn => "sequential_nn",
        }
    }

    /// Algorithm name as printed in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::LinearSvm => "SVM",
            ModelKind::RandomForest => "Random Forest",
            ModelKind::GradientBoostedTrees => "XGBoost",
            ModelKind::Mlp => "MLP",
            ModelKind::SequentialNn => "Sequential Neural Network",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_tree_ensemble(self) -> bool {
        matches!(self, ModelKind::RandomForest | ModelKind::GradientBoostedTrees)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// `learning_rate / sqrt(epoch)`
    InverseSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub schedule: StepSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostingParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

/// Settings for every kind; [`train`] reads the section matching its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    /// Multiplies the loss contribution of vulnerable (positive) rows.
    pub positive_class_weight: f64,
    pub linear_svm: SvmParams,
    pub random_forest: ForestParams,
    pub gradient_boosted_trees: BoostingParams,
    pub mlp: MlpParams,
    pub sequential_nn: SequentialParams,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            positive_class_weight: 1.0,
            linear_svm: SvmParams {
                c: 10.0,
                epochs: 300,
                learning_rate: 0.5,
                schedule: StepSchedule::InverseSqrt,
            },
            random_forest: ForestParams {
                n_trees: 100,
                max_depth: 8,
                min_samples_leaf: 2,
                features_per_split: 6,
                bootstrap: true,
            },
            gradient_boosted_trees: BoostingParams {
                n_rounds: 100,
                learning_rate: 0.1,
                max_depth: 3,
                lambda: 1.0,
                min_child_weight: 1e-3,
            },
            mlp: MlpParams {
                hidden: 16,
                epochs: 1000,
                learning_rate: 0.1,
                momentum: 0.9,
            },
            sequential_nn: SequentialParams {
                hidden: vec![16, 8],
                epochs: 100,
                batch_size: 32,
                learning_rate: 0.05,
                momentum: 0.9,
            },
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Hyperparameter(what.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.positive_class_weight) {
            return bad("positive_class_weight must be positive");
        }
        let s = &self.linear_svm;
        if !positive(s.c) || s.epochs == 0 || !positive(s.learning_rate) {
            return bad("linear_svm: c, epochs and learning_rate must be positive");
        }
        let f = &self.random_forest;
        if f.n_trees == 0 || f.max_depth == 0 || f.min_samples_leaf == 0 || f.features_per_split == 0 {
            return bad("random_forest: counts must be positive");
        }
        let g = &self.gradient_boosted_trees;
        if !positive(g.learning_rate) || g.max_depth == 0 {
            return bad("gradient_boosted_trees: learning_rate and max_depth must be positive");
        }
        if !(g.lambda.is_finite() && g.lambda >= 0.0) || !(g.min_child_weight.is_finite() && g.min_child_weight >= 0.0) {
            return bad("gradient_boosted_trees: lambda and min_child_weight must be non-negative");
        }
        let m = &self.mlp;
        if m.hidden == 0 || m.epochs == 0 || !positive(m.learning_rate) || !(0.0..1.0).contains(&m.momentum) {
            return bad("mlp: hidden, epochs, learning_rate must be positive and momentum in [0, 1)");
        }
        let q = &self.sequential_nn;
        if q.hidden.len() < 2 || q.hidden.contains(&0) {
            return bad("sequential_nn: needs at least two non-empty hidden layers");
        }
        if q.epochs == 0 || q.batch_size == 0 || !positive(q.learning_rate) || !(0.0..1.0).contains(&q.momentum) {
            return bad("sequential_nn: epochs, batch_size, learning_rate must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelParameters {
    LinearSvm(LinearSvm),
    RandomForest(RandomForest),
    GradientBoostedTrees(BoostedTrees),
    Mlp(Network),
    SequentialNn(Network),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    /// Hash of the training matrix and labels.
    pub dataset_hash: String,
    pub n_train: usize,
    pub n_positive: usize,
    /// Training objective per epoch / boosting round (boosting includes the
    /// initial constant model as entry 0).
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub layout: FeatureLayout,
    pub parameters: ModelParameters,
    pub preprocessing: Standardizer,
    /// Decision cutoff applied by [`classify`]; 0.5 until tuned.
    pub threshold: f64,
    pub metadata: TrainMetadata,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("no training rows")]
    Empty,
    #[error("training rows contain a single class (all {})", if *.0 { "vulnerable" } else { "not vulnerable" })]
    SingleClass(bool),
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{rows} labels for {features} feature rows")]
    LabelCount { rows: usize, features: usize },
    #[error("layout mismatch: model expects {expected} features, got {actual}")]
    LayoutMismatch { expected: usize, actual: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparameter(String),
    #[error("feature importance by impurity is not defined for {0}")]
    UnsupportedKind(ModelKind),
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
}

fn training_hash(x: &Matrix, labels: &[bool]) -> String {
    let mut h = TableHasher::new();
    h.u64(x.rows() as u64).u64(x.cols() as u64);
    for v in x.as_slice() {
        h.f64(*v);
    }
    for &y in labels {
        h.bytes(&[u8::from(y)]);
    }
    h.finish()
}

/// Trains one model. `x` columns must follow `layout`.
pub fn train(
    kind: ModelKind,
    layout: &FeatureLayout,
    x: &Matrix,
    labels: &[bool],
    hp: &Hyperparameters,
    seed: u64,
) -> Result<TrainedModel, ModelError> {
    hp.validate()?;
    if x.rows() == 0 {
        return Err(ModelError::Empty);
    }
    if labels.len() != x.rows() {
        return Err(ModelError::LabelCount {
            rows: labels.len(),
            features: x.rows(),
        });
    }
    if x.cols() != layout.len() {
        return Err(ModelError::LayoutMismatch {
            expected: layout.len(),
            actual: x.cols(),
        });
    }
    if let Some(pos) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            row: pos / x.cols(),
            col: pos % x.cols(),
        });
    }
    let n_positive = labels.iter().filter(|&&y| y).count();
    if n_positive == 0 || n_positive == labels.len() {
        return Err(ModelError::SingleClass(n_positive > 0));
    }

    let preprocessing = Standardizer::fit(x);
    let xs = preprocessing.transform(x);
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { hp.positive_class_weight } else { 1.0 })
        .collect();
    let diverged = |e: nn::Diverged| ModelError::Diverged { epoch: e.epoch };

    let (parameters, loss_history) = match kind {
        ModelKind::LinearSvm => {
            let (m, h) = LinearSvm::fit(&xs, labels, &weights, &hp.linear_svm);
            if let Some(epoch) = h.iter().position(|l| !l.is_finite()) {
                return Err(ModelError::Diverged { epoch: epoch + 1 });
            }
            (ModelParameters::LinearSvm(m), h)
        }
        ModelKind::RandomForest => (
            ModelParameters::RandomForest(RandomForest::fit(&xs, labels, &weights, &hp.random_forest, seed)),
            Vec::new(),
        ),
        ModelKind::GradientBoostedTrees => {
            let (m, h) = BoostedTrees::fit(&xs, labels, &weights, &hp.gradient_boosted_trees);
            if let Some(round) = h.iter().position(|l| !l.is_finite()) {
                return Err(ModelError::Diverged { epoch: round });
            }
            (ModelParameters::GradientBoostedTrees(m), h)
        }
        ModelKind::Mlp => {
            let p = &hp.mlp;
            let t = train_network(
                &xs,
                labels,
                &weights,
                &[p.hidden],
                DescentSettings {
                    epochs: p.epochs,
                    learning_rate: p.learning_rate,
                    momentum: p.momentum,
                    batch_size: None,
                },
                seed,
            )
            .map_err(diverged)?;
            (ModelParameters::Mlp(t.network), t.history)
        }
        ModelKind::SequentialNn => {
            let p = &hp.sequential_nn;
            let t = train_network(
                &xs,
                labels,
                &weights,
                &p.hidden,
                DescentSettings {
                    epochs: p.epochs,
                    learning_rate: p.learning_rate,
                    momentum: p.momentum,
                    batch_size: Some(p.batch_size),
                },
                seed,
            )
            .map_err(diverged)?;
            (ModelParameters::SequentialNn(t.network), t.history)
        }
    };

    Ok(TrainedModel {
        kind,
        layout: layout.clone(),
        parameters,
        preprocessing,
        threshold: 0.5,
        metadata: TrainMetadata {
            seed,
            hyperparameters: hp.clone(),
            dataset_hash: training_hash(x, labels),
            n_train: x.rows(),
            n_positive,
            loss_history,
        },
    })
}

impl TrainedModel {
    fn score_standardized(&self, row: &[f64]) -> f64 {
        let s = match &self.parameters {
            ModelParameters::LinearSvm(m) => m.predict(row),
            ModelParameters::RandomForest(m) => m.predict(row),
            ModelParameters::GradientBoostedTrees(m) => m.predict(row),
            ModelParameters::Mlp(m) | ModelParameters::SequentialNn(m) => m.predict(row),
        };
        s.clamp(0.0, 1.0)
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ModelError::Threshold(threshold));
        }
        self.threshold = threshold;
        Ok(())
    }
}

/// Positive-class probability for each row.
pub fn predict_scores(model: &TrainedModel, x: &Matrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != model.layout.len() {
        return Err(ModelError::LayoutMismatch {
            expected: model.layout.len(),
            actual: x.cols(),
        });
    }
    let xs = model.preprocessing.transform(x);
    Ok(xs.iter_rows().map(|r| model.score_standardized(r)).collect())
}

/// `score >= threshold` for each row.
pub fn classify(model: &TrainedModel, x: &Matrix) -> Result<Vec<bool>, ModelError> {
    Ok(predict_scores(model, x)?
        .into_iter()
        .map(|s| s >= model.threshold)
        .collect())
}

/// One entry of an importance ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedImportance {
    /// Layout position or field name, depending on the view.
    pub key: String,
    pub importance: f64,
}

/// Mean decrease in impurity for tree ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdiImportance {
    /// `(layout position, importance)`, descending; ties by position.
    pub positions: Vec<(usize, f64)>,
    /// One-hot groups summed per source field, descending; ties by layout order.
    pub fields: Vec<RankedImportance>,
}

/// Sorts descending by value; equal values keep their input order.
pub(crate) fn rank_desc<T>(items: &mut [(T, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1));
}

/// Per-tree impurity decreases summed per feature, averaged over trees and
/// normalized to sum to 1. For boosted trees the decrease is the split's
/// regularized loss reduction.
pub fn mdi_feature_importance(model: &TrainedModel) -> Result<MdiImportance, ModelError> {
    let trees = match &model.parameters {
        ModelParameters::RandomForest(f) => &f.trees,
        ModelParameters::GradientBoostedTrees(b) => &b.trees,
        _ => return Err(ModelError::UnsupportedKind(model.kind)),
    };
    let d = model.layout.len();
    let mut total = vec![0.0; d];
    for t in trees {
        for (acc, v) in total.iter_mut().zip(t.importances(d)) {
            *acc += v;
        }
    }
    if !trees.is_empty() {
        total.iter_mut().for_each(|v| *v /= trees.len() as f64);
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    let mut positions: Vec<(usize, f64)> = total.iter().copied().enumerate().collect();
    rank_desc(&mut positions);
    let mut fields: Vec<(String, f64)> = model
        .layout
        .field_groups()
        .into_iter()
        .map(|g| {
            let v = total[g.positions].iter().sum();
            (g.field, v)
        })
        .collect();
    rank_desc(&mut fields);
    Ok(MdiImportance {
        positions,
        fields: fields
            .into_iter()
            .map(|(key, importance)| RankedImportance { key, importance })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};
    use rand::Rng;

    fn xor_data(n: usize) -> (Matrix, Vec<bool>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let (a, b) = ((i % 2) as f64, ((i / 2) % 2) as f64);
            rows.push([a, b]);
            y.push((a != b) as u8 == 1);
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]);
        let err = train(
            ModelKind::RandomForest,
            &FeatureLayout::numeric(1),
            &x,
            &[false, false],
            &Hyperparameters::default(),
            1,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::SingleClass(false));
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let x = Matrix::from_rows(&[[0.0], [f64::NAN]]);
        let err = train(
            ModelKind::Mlp,
            &FeatureLayout::numeric(1),
            &x,
            &[true, false],
            &Hyperparameters::default(),
            1,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::NonFinite { row: 1, col: 0 });
    }

    #[test]
    fn scores_stay_in_unit_interval_for_every_kind() {
        let (x, y) = xor_data(64);
        let mut hp = Hyperparameters::default();
        hp.mlp.epochs = 50;
        hp.sequential_nn.epochs = 5;
        hp.random_forest.n_trees = 5;
        hp.gradient_boosted_trees.n_rounds = 5;
        hp.linear_svm.epochs = 20;
        for kind in ModelKind::ALL {
            let m = train(kind, &FeatureLayout::numeric(2), &x, &y, &hp, 4).unwrap();
            let s = predict_scores(&m, &x).unwrap();
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
            // Duplicated rows score identically.
            assert_eq!(s[0], s[4]);
        }
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let (x, y) = xor_data(16);
        let mut hp = Hyperparameters::default();
        hp.random_forest.n_trees = 2;
        let m = train(ModelKind::RandomForest, &FeatureLayout::numeric(2), &x, &y, &hp, 4).unwrap();
        let wrong = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        assert_eq!(
            predict_scores(&m, &wrong).unwrap_err(),
            ModelError::LayoutMismatch { expected: 2, actual: 3 }
        );
    }

    #[test]
    fn zero_round_boosting_is_constant_base_score() {
        let (x, y) = xor_data(40);
        let mut hp = Hyperparameters::default();
        hp.gradient_boosted_trees.n_rounds = 0;
        let m = train(ModelKind::GradientBoostedTrees, &FeatureLayout::numeric(2), &x, &y, &hp, 1).unwrap();
        let s = predict_scores(&m, &x).unwrap();
        let ModelParameters::GradientBoostedTrees(b) = &m.parameters else {
            unreachable!()
        };
        let expected = crate::math::logistic(b.base_margin);
        assert!(s.iter().all(|&v| v == expected));
        // 20 of 40 xor rows are positive -> base margin ln(1) = 0
        assert_eq!(expected, 0.5);
    }

    #[test]
    fn classify_applies_threshold() {
        let (x, y) = xor_data(16);
        let mut hp = Hyperparameters::default();
        hp.random_forest.n_trees = 3;
        let mut m = train(ModelKind::RandomForest, &FeatureLayout::numeric(2), &x, &y, &hp, 4).unwrap();
        m.set_threshold(0.0).unwrap();
        assert!(classify(&m, &x).unwrap().iter().all(|&v| v));
        m.set_threshold(1.0).unwrap();
        let s = predict_scores(&m, &x).unwrap();
        let c = classify(&m, &x).unwrap();
        for (score, label) in s.iter().zip(c) {
            assert_eq!(label, *score >= 1.0);
        }
        assert!(m.set_threshold(1.5).is_err());
    }

    #[test]
    fn mdi_rejects_non_tree_kinds() {
        let (x, y) = xor_data(16);
        let mut hp = Hyperparameters::default();
        hp.linear_svm.epochs = 5;
        let m = train(ModelKind::LinearSvm, &FeatureLayout::numeric(2), &x, &y, &hp, 4).unwrap();
        assert_eq!(
            mdi_feature_importance(&m).unwrap_err(),
            ModelError::UnsupportedKind(ModelKind::LinearSvm)
        );
    }

    #[test]
    fn hyperparameter_validation() {
        let mut hp = Hyperparameters::default();
        assert!(hp.validate().is_ok());
        hp.sequential_nn.hidden = vec![4];
        assert!(hp.validate().is_err());
        let mut hp = Hyperparameters::default();
        hp.gradient_boosted_trees.lambda = -1.0;
        assert!(hp.validate().is_err());
        let mut hp = Hyperparameters::default();
        hp.random_forest.n_trees = 0;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn forest_training_is_seed_deterministic() {
        let mut rng = stream_rng(9, stream::CONTROL, 0);
        let rows: Vec<[f64; 3]> = (0..120)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let y: Vec<bool> = rows.iter().map(|r| r[0] + 0.3 * r[1] > 0.6).collect();
        let x = Matrix::from_rows(&rows);
        let mut hp = Hyperparameters::default();
        hp.random_forest.n_trees = 10;
        hp.random_forest.features_per_split = 1;
        let layout = FeatureLayout::numeric(3);
        let a = train(ModelKind::RandomForest, &layout, &x, &y, &hp, 21).unwrap();
        let b = train(ModelKind::RandomForest, &layout, &x, &y, &hp, 21).unwrap();
        let c = train(ModelKind::RandomForest, &layout, &x, &y, &hp, 22).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.parameters, c.parameters);
    }
}
