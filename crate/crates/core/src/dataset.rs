//! Labeled synthetic datasets and train/validation/test splitting.
//!
//! Profiles are sampled once, partitioned by the split ratio (train rows
//! first, then validation, then test), and only then labeled, each split by
//! its own [`RuleSet`]. Labels for row `i` come from the stream
//! `(seed, LABEL, i)`, so changing one split's rules never perturbs another
//! split's labels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{self, TableHasher};
use crate::layout::{encode_profile, EncodeError, FeatureLayout, FeatureVector};
use crate::ml::Matrix;
use crate::population::{sample_population, PopulationSpec};
use crate::profile::MigrantProfile;
use crate::rng::{stream, stream_rng};
use crate::rules::{label_profile, RuleError, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

/// Rule set used to label each split. Use [`SplitRules::shared`] when one
/// author's rules label everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRules {
    pub train: RuleSet,
    pub validation: RuleSet,
    pub test: RuleSet,
}

impl SplitRules {
    pub fn shared(rules: RuleSet) -> Self {
        Self {
            train: rules.clone(),
            validation: rules.clone(),
            test: rules,
        }
    }

    pub fn for_split(&self, split: Split) -> &RuleSet {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub population: PopulationSpec,
    pub rules: SplitRules,
    pub n_total: usize,
    pub ratio: SplitRatio,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub n_total: usize,
    pub ratio: SplitRatio,
    /// `author_tag@hash` for the train, validation and test rule sets.
    pub ruleset_ids: [String; 3],
    pub population_hash: String,
    pub layout_hash: String,
    /// Hash of the encoded rows, labels and split assignment.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub features: FeatureVector,
    pub label: bool,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub layout: FeatureLayout,
    pub rows: Vec<LabeledRow>,
    pub metadata: DatasetMetadata,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rule set for {split} split: {source}")]
    Rules { split: &'static str, source: RuleError },
    #[error("row {row}: {source}")]
    Encode { row: usize, source: EncodeError },
}

const RATIO_TOLERANCE: f64 = 1e-9;

/// Split sizes: validation and test are `floor(n * ratio)`, train takes the
/// remainder.
pub fn split_sizes(n_total: usize, ratio: SplitRatio) -> Result<[usize; 3], DatasetError> {
    let parts = [ratio.train, ratio.validation, ratio.test];
    if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(DatasetError::Config(format!(
            "split ratio components must be positive, got {}:{}:{}",
            ratio.train, ratio.validation, ratio.test
        )));
    }
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > RATIO_TOLERANCE {
        return Err(DatasetError::Config(format!("split ratio sums to {sum}, expected 1")));
    }
    // The epsilon keeps products like 0.15 * 20 = 2.9999999999999996 at 3.
    let floor = |r: f64| crate::math::floor(n_total as f64 * r + 1e-9) as usize;
    let validation = floor(ratio.validation);
    let test = floor(ratio.test);
    if test == 0 {
        return Err(DatasetError::Config(format!(
            "n_total = {n_total} is too small for a non-empty test split"
        )));
    }
    if validation == 0 {
        return Err(DatasetError::Config(format!(
            "n_total = {n_total} is too small for a non-empty validation split"
        )));
    }
    let train = n_total - validation - test;
    if train == 0 {
        return Err(DatasetError::Config(format!(
            "n_total = {n_total} leaves no training rows"
        )));
    }
    Ok([train, validation, test])
}

fn ruleset_id(rules: &RuleSet) -> String {
    format!("{}@{}", rules.author_tag, &fingerprint::of_json(rules)[..16])
}

/// Labels and encodes already-sampled profiles. `splits[i]` is row `i`'s split.
pub fn label_rows(
    profiles: &[MigrantProfile],
    splits: &[Split],
    rules: &SplitRules,
    layout: &FeatureLayout,
    seed: u64,
) -> Result<Vec<LabeledRow>, DatasetError> {
    profiles
        .iter()
        .zip(splits)
        .enumerate()
        .map(|(i, (profile, &split))| {
            let mut rng = stream_rng(seed, stream::LABEL, i as u64);
            let label = label_profile(rules.for_split(split), profile, &mut rng);
            let features = encode_profile(profile, layout).map_err(|source| DatasetError::Encode { row: i, source })?;
            Ok(LabeledRow { features, label, split })
        })
        .collect()
}

/// Split assignment for `n_total` rows under `ratio`, in row order.
pub fn split_assignment(n_total: usize, ratio: SplitRatio) -> Result<Vec<Split>, DatasetError> {
    let [train, validation, test] = split_sizes(n_total, ratio)?;
    let mut out = Vec::with_capacity(n_total);
    out.extend(core::iter::repeat_n(Split::Train, train));
    out.extend(core::iter::repeat_n(Split::Validation, validation));
    out.extend(core::iter::repeat_n(Split::Test, test));
    Ok(out)
}

/// Samples, splits, labels and encodes a dataset.
pub fn generate_dataset(config: &GenerationConfig, layout: &FeatureLayout) -> Result<LabeledDataset, DatasetError> {
    for split in Split::ALL {
        config
            .rules
            .for_split(split)
            .validate()
            .map_err(|source| DatasetError::Rules {
                split: split.as_str(),
                source,
            })?;
    }
    let splits = split_assignment(config.n_total, config.ratio)?;
    let profiles = sample_population(&config.population, config.n_total, config.seed);
    let rows = label_rows(&profiles, &splits, &config.rules, layout, config.seed)?;
    Ok(LabeledDataset::new(
        layout.clone(),
        rows,
        DatasetMetadata {
            seed: config.seed,
            n_total: config.n_total,
            ratio: config.ratio,
            ruleset_ids: [
                ruleset_id(&config.rules.train),
                ruleset_id(&config.rules.validation),
                ruleset_id(&config.rules.test),
            ],
            population_hash: fingerprint::of_json(&config.population),
            layout_hash: String::new(),
            content_hash: String::new(),
        },
    ))
}

impl LabeledDataset {
    /// Assembles a dataset and fills in the layout and content hashes.
    pub fn new(layout: FeatureLayout, rows: Vec<LabeledRow>, mut metadata: DatasetMetadata) -> Self {
        metadata.layout_hash = fingerprint::of_json(&layout);
        metadata.content_hash = content_hash(&rows);
        Self { layout, rows, metadata }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }

    pub fn positives(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split && r.label).count()
    }

    /// Feature matrix and labels of one split, in row order.
    pub fn split(&self, split: Split) -> (Matrix, Vec<bool>) {
        let rows: Vec<&LabeledRow> = self.rows.iter().filter(|r| r.split == split).collect();
        let mut data = Vec::with_capacity(rows.len() * self.layout.len());
        for r in &rows {
            data.extend_from_slice(&r.features.values);
        }
        let labels = rows.iter().map(|r| r.label).collect();
        (Matrix::new(rows.len(), self.layout.len(), data), labels)
    }
}

pub fn content_hash(rows: &[LabeledRow]) -> String {
    let mut h = TableHasher::new();
    h.u64(rows.len() as u64);
    for r in rows {
        h.bytes(&[r.split as u8, u8::from(r.label)]);
        h.u64(r.features.values.len() as u64);
        for v in &r.features.values {
            h.f64(*v);
        }
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::build_layout;
    use crate::population::fixtures::spec;
    use crate::profile::fixtures::{registry, schema};
    use crate::rules::parse_ruleset;

    fn config(n_total: usize) -> GenerationConfig {
        let rules = parse_ruleset(
            "BASE_LOG_ODDS -3\nRULE young: age < 18 => 2.0\nRULE alone: accompanying_adult = false => 1.5",
            &schema(),
        )
        .unwrap();
        GenerationConfig {
            population: spec(),
            rules: SplitRules::shared(rules),
            n_total,
            ratio: SplitRatio::default(),
            seed: 11,
        }
    }

    #[test]
    fn default_ratio_sizes() {
        assert_eq!(split_sizes(1334, SplitRatio::default()).unwrap(), [934, 200, 200]);
        assert_eq!(split_sizes(100, SplitRatio::default()).unwrap(), [70, 15, 15]);
        assert_eq!(split_sizes(20, SplitRatio::default()).unwrap(), [14, 3, 3]);
    }

    #[test]
    fn degenerate_ratios_are_rejected() {
        let r = SplitRatio {
            train: 1.0,
            validation: 0.0,
            test: 0.0,
        };
        assert!(matches!(split_sizes(10, r), Err(DatasetError::Config(_))));
        assert!(matches!(split_sizes(5, SplitRatio::default()), Err(DatasetError::Config(_))));
        let r = SplitRatio {
            train: 0.7,
            validation: 0.2,
            test: 0.2,
        };
        assert!(matches!(split_sizes(100, r), Err(DatasetError::Config(_))));
    }

    #[test]
    fn generates_expected_split_sizes() {
        let layout = build_layout(schema().questions(), &registry()).unwrap();
        let ds = generate_dataset(&config(1334), &layout).unwrap();
        assert_eq!(ds.rows.len(), 1334);
        assert_eq!(ds.split_len(Split::Train), 934);
        assert_eq!(ds.split_len(Split::Validation), 200);
        assert_eq!(ds.split_len(Split::Test), 200);
        let (m, y) = ds.split(Split::Test);
        assert_eq!((m.rows(), m.cols(), y.len()), (200, layout.len(), 200));
    }

    #[test]
    fn generation_is_bit_identical() {
        let layout = build_layout(schema().questions(), &registry()).unwrap();
        let a = generate_dataset(&config(300), &layout).unwrap();
        let b = generate_dataset(&config(300), &layout).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.metadata.content_hash, b.metadata.content_hash);
        let mut other = config(300);
        other.seed = 12;
        assert_ne!(
            generate_dataset(&other, &layout).unwrap().metadata.content_hash,
            a.metadata.content_hash
        );
    }

    #[test]
    fn test_labels_ignore_train_rules() {
        let layout = build_layout(schema().questions(), &registry()).unwrap();
        let base = config(400);
        let mut sentinel = base.clone();
        sentinel.rules.train = parse_ruleset("BASE_LOG_ODDS 30", &schema()).unwrap();
        let a = generate_dataset(&base, &layout).unwrap();
        let b = generate_dataset(&sentinel, &layout).unwrap();
        let labels = |d: &LabeledDataset, s: Split| -> Vec<bool> {
            d.rows.iter().filter(|r| r.split == s).map(|r| r.label).collect()
        };
        assert_eq!(labels(&a, Split::Test), labels(&b, Split::Test));
        assert_eq!(labels(&a, Split::Validation), labels(&b, Split::Validation));
        assert!(labels(&b, Split::Train).iter().all(|&l| l));
        assert_ne!(a.metadata.ruleset_ids[0], b.metadata.ruleset_ids[0]);
    }

    #[test]
    fn every_row_in_exactly_one_split() {
        let splits = split_assignment(1334, SplitRatio::default()).unwrap();
        assert_eq!(splits.len(), 1334);
        let count = |s| splits.iter().filter(|&&x| x == s).count();
        assert_eq!(count(Split::Train) + count(Split::Validation) + count(Split::Test), 1334);
    }
}
