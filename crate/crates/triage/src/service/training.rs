//! Training, publishing and scoring against the store.

use std::collections::BTreeMap;

use migtriage_core::dataset::{split_assignment, DatasetMetadata, LabeledRow};
use migtriage_core::fingerprint;
use migtriage_core::rng::{stream, stream_rng};
use migtriage_core::{
    encode_profile, predict_scores, EvaluationReport, Hyperparameters, LabeledDataset, Matrix, ModelKind, Split,
    ThresholdPolicy,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, InStage, StageError};
use crate::experiment::{self, provenance};
use crate::files::ModelEnvelope;
use crate::store::{now_ms, ModelSummary, RiskAssessment, Store, StoreError};

/// Smallest labeled dataset a model may be trained on.
pub const MIN_TRAINING_ROWS: usize = 50;
pub const TOP_FACTORS: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate from the service's experiment config.
    #[default]
    Synthetic,
    /// Stored surveys that have a label.
    Stored,
}

/// Body of `POST /api/models/train`. Omitted fields take the values of the
/// service's experiment config.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    #[serde(default)]
    pub source: DataSource,
    pub kind: Option<ModelKind>,
    pub seed: Option<u64>,
    pub n_total: Option<usize>,
    pub hyperparameters: Option<Hyperparameters>,
    pub policy: Option<ThresholdPolicy>,
}

impl TrainRequest {
    pub fn kind(&self) -> ModelKind {
        self.kind.unwrap_or(ModelKind::RandomForest)
    }

    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        if let Some(seed) = self.seed {
            c.generation.seed = seed;
        }
        if let Some(n) = self.n_total {
            c.generation.n_total = n;
        }
        if let Some(h) = &self.hyperparameters {
            c.hyperparameters = h.clone();
        }
        if let Some(p) = self.policy {
            c.policy = p;
        }
        c
    }
}

fn insufficient(message: String) -> StageError {
    StageError {
        stage: "dataset",
        source: Error::Invalid(message),
    }
}

fn check_rows(n: usize, positives: usize) -> Result<(), StageError> {
    if n < MIN_TRAINING_ROWS {
        return Err(insufficient(format!(
            "insufficient data: {n} labeled rows, at least {MIN_TRAINING_ROWS} needed"
        )));
    }
    if positives == 0 || positives == n {
        return Err(insufficient(format!("single-class data: {positives} of {n} rows are positive")));
    }
    Ok(())
}

/// Cheap checks done before a job is started.
pub fn precheck(store: &Store, base: &ExperimentConfig, req: &TrainRequest) -> Result<(), StageError> {
    let config = req.config(base);
    config.validate().stage("config")?;
    match req.source {
        DataSource::Synthetic if config.generation.n_total < MIN_TRAINING_ROWS => Err(insufficient(format!(
            "insufficient data: n_total {} is below {MIN_TRAINING_ROWS}",
            config.generation.n_total
        ))),
        DataSource::Synthetic => Ok(()),
        DataSource::Stored => {
            let st = store.read();
            let labels: Vec<bool> = st
                .labels
                .iter()
                .filter(|(id, _)| st.record(**id).is_some())
                .map(|(_, l)| *l)
                .collect();
            check_rows(labels.len(), labels.iter().filter(|l| **l).count())
        }
    }
}

/// Labeled stored surveys, shuffled with the split-assignment stream and
/// split with the configured ratio.
pub fn stored_dataset(store: &Store, config: &ExperimentConfig) -> Result<LabeledDataset, StageError> {
    let layout = experiment::layout(config).stage("dataset")?;
    let st = store.read();
    let mut labeled: Vec<(u64, bool)> = st
        .labels
        .iter()
        .filter(|(id, _)| st.record(**id).is_some())
        .map(|(id, l)| (*id, *l))
        .collect();
    check_rows(labeled.len(), labeled.iter().filter(|(_, l)| *l).count())?;
    labeled.shuffle(&mut stream_rng(config.seed(), stream::SPLIT_ASSIGNMENT, 0));
    let splits = split_assignment(labeled.len(), config.generation.ratio).stage("dataset")?;
    let mut rows = Vec::with_capacity(labeled.len());
    for ((id, label), split) in labeled.iter().zip(splits) {
        let record = st.record(*id).expect("filtered above");
        let features = encode_profile(&record.profile, &layout)
            .map_err(|e| Error::Invalid(format!("record {id}: {e}")))
            .stage("dataset")?;
        rows.push(LabeledRow {
            features,
            label: *label,
            split,
        });
    }
    let label_hash = fingerprint::of_json(&labeled);
    let id = format!("stored-labels@{label_hash}");
    let metadata = DatasetMetadata {
        seed: config.seed(),
        n_total: rows.len(),
        ratio: config.generation.ratio,
        ruleset_ids: [id.clone(), id.clone(), id],
        population_hash: label_hash,
        layout_hash: String::new(),
        content_hash: String::new(),
    };
    Ok(LabeledDataset::new(layout, rows, metadata))
}

#[derive(Debug, Clone, Serialize)]
pub struct Published {
    pub model: ModelSummary,
    pub report: EvaluationReport,
}

/// The whole pipeline for one kind: dataset, train, threshold, evaluate on
/// the test split, then store the model and make it active.
pub fn train_and_publish(store: &Store, base: &ExperimentConfig, req: &TrainRequest) -> Result<Published, StageError> {
    let config = req.config(base);
    config.validate().stage("config")?;
    let dataset = match req.source {
        DataSource::Synthetic => experiment::generate(&config)?,
        DataSource::Stored => stored_dataset(store, &config)?,
    };
    check_rows(dataset.rows.len(), dataset.rows.iter().filter(|r| r.label).count())?;
    for split in [Split::Validation, Split::Test] {
        if dataset.split_len(split) == 0 {
            return Err(insufficient(format!("the {} split is empty", split.as_str())));
        }
    }
    let model = experiment::train_model(&config, &dataset, req.kind())?;
    let (report, importance) = experiment::evaluate(&config, &dataset, &model)?;
    let envelope = ModelEnvelope::new(model, config.schema.version(), provenance(&config));
    let summary = store
        .publish(envelope, report.clone(), importance.preferred())
        .map_err(|e| Error::Invalid(e.to_string()))
        .stage("publish")?;
    Ok(Published { model: summary, report })
}

#[derive(Debug, thiserror::Error)]
pub enum AssessError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    SchemaMismatch(String),
    #[error("record {id}: {message}")]
    Encode { id: u64, message: String },
    #[error(transparent)]
    Model(#[from] migtriage_core::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssessOutcome {
    pub model_id: String,
    pub assessed: usize,
    pub flagged: usize,
    /// False when every record already carried this model's assessment.
    pub written: bool,
}

/// Scores every stored record with a published model.
pub fn assess_all(store: &Store, config: &ExperimentConfig, model_id: &str) -> Result<AssessOutcome, AssessError> {
    let published = store.load_model(model_id)?;
    let model = &published.envelope.model;
    if published.envelope.schema_version != config.schema.version() {
        return Err(AssessError::SchemaMismatch(format!(
            "model {model_id} was trained under schema version {}, current is {}",
            published.envelope.schema_version,
            config.schema.version()
        )));
    }
    let layout = experiment::layout(config).map_err(|e| AssessError::SchemaMismatch(e.to_string()))?;
    if model.layout != layout {
        return Err(AssessError::SchemaMismatch(format!(
            "model {model_id} feature layout does not match the current schema"
        )));
    }
    let top_factors: Vec<String> = published.importance.iter().take(TOP_FACTORS).map(|f| f.field.clone()).collect();

    let (ids, existing, matrix) = {
        let st = store.read();
        let mut data = Vec::with_capacity(st.records.len() * layout.len());
        for r in &st.records {
            let v = encode_profile(&r.profile, &layout).map_err(|e| AssessError::Encode {
                id: r.id,
                message: e.to_string(),
            })?;
            data.extend_from_slice(&v.values);
        }
        let ids: Vec<u64> = st.records.iter().map(|r| r.id).collect();
        let existing: BTreeMap<u64, (String, f64)> = st
            .assessments
            .iter()
            .map(|(id, a)| (*id, (a.model_id.clone(), a.score)))
            .collect();
        (ids, existing, Matrix::new(st.records.len(), layout.len(), data))
    };
    if ids.is_empty() {
        return Ok(AssessOutcome {
            model_id: model_id.into(),
            assessed: 0,
            flagged: 0,
            written: false,
        });
    }
    let scores = predict_scores(model, &matrix)?;
    let now = now_ms();
    let items: Vec<RiskAssessment> = ids
        .iter()
        .zip(&scores)
        .map(|(&record_id, &score)| RiskAssessment {
            record_id,
            score,
            flagged: score >= model.threshold,
            model_id: model_id.into(),
            top_factors: top_factors.clone(),
            assessed_at_ms: now,
        })
        .collect();
    let flagged = items.iter().filter(|a| a.flagged).count();
    let unchanged = items
        .iter()
        .all(|a| existing.get(&a.record_id).is_some_and(|(m, s)| m == model_id && *s == a.score));
    if !unchanged {
        store.record_assessments(model_id, items)?;
    }
    Ok(AssessOutcome {
        model_id: model_id.into(),
        assessed: ids.len(),
        flagged,
        written: !unchanged,
    })
}
