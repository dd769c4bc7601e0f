//! Core algorithms for migrant vulnerability triage.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: the survey schema and feature encoding, rule-based synthetic
//! data generation, the five classifier families, and the evaluation metrics
//! used to tune and judge them. File formats, persistence, the HTTP service and
//! the command line live in the `migtriage` companion crate.
//!
//! Every randomized procedure takes an explicit 64-bit seed and derives
//! independent per-row / per-tree / per-trial streams from it (see [`rng`]), so
//! results never depend on iteration order or thread scheduling.
#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod dataset;
pub mod fingerprint;
pub mod layout;
pub mod math;
pub mod metrics;
pub mod ml;
pub mod population;
pub mod profile;
pub mod rng;
pub mod rules;
pub mod schema;

pub use dataset::{
    generate_dataset, split_sizes, DatasetError, GenerationConfig, LabeledDataset, Split,
    SplitRatio, SplitRules,
};
pub use layout::{build_layout, encode_profile, EncodeError, Encoding, FeatureLayout, FeatureVector};
pub use metrics::{
    build_report, confusion, f1_and_accuracy, permutation_feature_importance,
    permutation_significance, select_threshold, ConfusionMatrix, EvaluationReport, MetricsError,
    ThresholdPolicy,
};
pub use ml::{
    classify, mdi_feature_importance, predict_scores, train, Hyperparameters, Matrix, ModelError,
    ModelKind, TrainedModel,
};
pub use population::{sample_population, PopulationSpec};
pub use profile::{Answer, MigrantProfile, ValidationError};
pub use rules::{label_profile, parse_ruleset, Rule, RuleError, RuleSet};
pub use schema::{AnswerKind, CityRegistry, QuestionSpec, Schema, SchemaError, Topic};
