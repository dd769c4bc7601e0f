//! The cold-start experiment: generate → train → tune threshold → evaluate,
//! as individually callable stages and as one run.
//!
//! Each model kind trains, tests and shuffles with seeds derived from the
//! experiment seed and its position in [`ModelKind::ALL`], so a stage run on
//! its own produces exactly what the full run produces.

use std::path::{Path, PathBuf};

use migtriage_core::metrics::{FieldImportance, ImportanceMetric, Significance, SignificanceSettings, Statistic};
use migtriage_core::ml::RankedImportance;
use migtriage_core::rng::{derive_seed, stream};
use migtriage_core::{
    build_layout, build_report, classify, generate_dataset, mdi_feature_importance, permutation_feature_importance,
    permutation_significance, predict_scores, select_threshold, train, EvaluationReport, FeatureLayout,
    LabeledDataset, ModelKind, Split, TrainedModel,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, InStage, Result, StageError};
use crate::files::{self, ModelEnvelope, Provenance};

fn kind_index(kind: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|k| *k == kind).expect("kind listed in ALL") as u64
}

pub fn training_seed(seed: u64, kind: ModelKind) -> u64 {
    derive_seed(seed, stream::MODEL_KIND, kind_index(kind))
}

pub fn significance_seed(seed: u64, kind: ModelKind) -> u64 {
    derive_seed(seed, stream::PERMUTATION_TEST, kind_index(kind))
}

pub fn importance_seed(seed: u64, kind: ModelKind) -> u64 {
    derive_seed(seed, stream::PERMUTATION_IMPORTANCE, kind_index(kind))
}

pub fn provenance(config: &ExperimentConfig) -> Provenance {
    Provenance::new(config.seed(), config.fingerprint())
}

pub fn layout(config: &ExperimentConfig) -> Result<FeatureLayout> {
    Ok(build_layout(config.schema.questions(), &config.registry)?)
}

/// Stage `generate`.
pub fn generate(config: &ExperimentConfig) -> Result<LabeledDataset, StageError> {
    let layout = layout(config).stage("generate")?;
    generate_dataset(&config.generation, &layout).stage("generate")
}

/// Stage `train`: fits on the train split, then picks the decision threshold
/// on the validation split with the configured policy.
pub fn train_model(config: &ExperimentConfig, dataset: &LabeledDataset, kind: ModelKind) -> Result<TrainedModel, StageError> {
    let (x, y) = dataset.split(Split::Train);
    let mut model = train(
        kind,
        &dataset.layout,
        &x,
        &y,
        &config.hyperparameters,
        training_seed(config.seed(), kind),
    )
    .stage("train")?;
    let (xv, yv) = dataset.split(Split::Validation);
    let scores = predict_scores(&model, &xv).stage("threshold")?;
    let threshold = select_threshold(&scores, &yv, config.policy).stage("threshold")?;
    model.set_threshold(threshold).stage("threshold")?;
    Ok(model)
}

/// Both importance views of one model on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelImportance {
    pub kind: ModelKind,
    /// Field-level mean decrease in impurity; tree ensembles only.
    pub mdi: Option<Vec<RankedImportance>>,
    /// Mean recall drop when a field is shuffled.
    pub permutation: Vec<FieldImportance>,
    pub n_repeats: usize,
}

impl ModelImportance {
    /// MDI when available, otherwise permutation importance.
    pub fn preferred(&self) -> Vec<FieldImportance> {
        match &self.mdi {
            Some(mdi) => mdi
                .iter()
                .map(|r| FieldImportance {
                    field: r.key.clone(),
                    importance: r.importance,
                })
                .collect(),
            None => self.permutation.clone(),
        }
    }
}

/// Stage `importance`.
pub fn importance(
    config: &ExperimentConfig,
    dataset: &LabeledDataset,
    model: &TrainedModel,
    n_repeats: usize,
) -> Result<ModelImportance, StageError> {
    let mdi = if model.kind.is_tree_ensemble() {
        Some(mdi_feature_importance(model).stage("importance")?.fields)
    } else {
        None
    };
    let (x, y) = dataset.split(Split::Test);
    let permutation = permutation_feature_importance(
        model,
        &x,
        &y,
        ImportanceMetric::Recall,
        n_repeats,
        importance_seed(config.seed(), model.kind),
    )
    .stage("importance")?;
    Ok(ModelImportance {
        kind: model.kind,
        mdi,
        permutation,
        n_repeats,
    })
}

pub fn significance_settings(config: &ExperimentConfig, kind: ModelKind) -> SignificanceSettings {
    SignificanceSettings {
        statistic: Statistic::F1,
        n_permutations: config.n_permutations,
        alpha: config.alpha,
        seed: significance_seed(config.seed(), kind),
    }
}

/// Stage `evaluate`: test-split report including the significance test and
/// the preferred importance ranking.
pub fn evaluate(
    config: &ExperimentConfig,
    dataset: &LabeledDataset,
    model: &TrainedModel,
) -> Result<(EvaluationReport, ModelImportance), StageError> {
    let (x, y) = dataset.split(Split::Test);
    let mut report = build_report(model, &x, &y, significance_settings(config, model.kind)).stage("evaluate")?;
    let imp = importance(config, dataset, model, config.importance_repeats)?;
    report.importance = Some(imp.preferred());
    Ok((report, imp))
}

/// Stage `significance`: the permutation test on its own.
pub fn significance(
    config: &ExperimentConfig,
    dataset: &LabeledDataset,
    model: &TrainedModel,
) -> Result<Significance, StageError> {
    let (x, y) = dataset.split(Split::Test);
    let predicted = classify(model, &x).stage("significance")?;
    let s = significance_settings(config, model.kind);
    permutation_significance(&y, &predicted, s.statistic, s.n_permutations, s.alpha, s.seed).stage("significance")
}

#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub model: TrainedModel,
    pub report: EvaluationReport,
    pub importance: ModelImportance,
    pub significance: Significance,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dataset: LabeledDataset,
    pub models: Vec<ModelOutcome>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<EvaluationReport> {
        self.models.iter().map(|m| m.report.clone()).collect()
    }

    pub fn model(&self, kind: ModelKind) -> Option<&ModelOutcome> {
        self.models.iter().find(|m| m.model.kind == kind)
    }
}

/// Runs every stage for `kinds` in memory.
pub fn run_experiment(config: &ExperimentConfig, kinds: &[ModelKind]) -> Result<ExperimentOutcome, StageError> {
    config.validate().stage("config")?;
    let dataset = generate(config)?;
    let mut models = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let model = train_model(config, &dataset, kind)?;
        let (report, importance) = evaluate(config, &dataset, &model)?;
        let significance = significance(config, &dataset, &model)?;
        models.push(ModelOutcome {
            model,
            report,
            importance,
            significance,
        });
    }
    Ok(ExperimentOutcome { dataset, models })
}

/// Paths of the files an experiment writes under its output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }

    pub fn model(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(format!("{kind}.json"))
    }

    pub fn report(&self, kind: ModelKind) -> PathBuf {
        self.root.join("reports").join(format!("{kind}.json"))
    }

    pub fn importance(&self, kind: ModelKind) -> PathBuf {
        self.root.join("importance").join(format!("{kind}.json"))
    }

    pub fn significance(&self, kind: ModelKind) -> PathBuf {
        self.root.join("significance").join(format!("{kind}.json"))
    }

    pub fn table(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn table_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn significance_summary(&self) -> PathBuf {
        self.root.join("significance.csv")
    }
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    provenance: Provenance,
    #[serde(flatten)]
    body: T,
}

pub fn write_stamped<T: Serialize>(path: &Path, provenance: &Provenance, body: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a, T> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        body: &'a T,
    }
    files::write_atomic(path, files::to_json(&Out { provenance, body }).as_bytes())
}

pub fn read_stamped<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Provenance, T)> {
    let s: Stamped<T> = files::read_json(path)?;
    Ok((s.provenance, s.body))
}

#[derive(Serialize, Deserialize)]
struct ReportBody {
    report: EvaluationReport,
}

#[derive(Serialize, Deserialize)]
struct SignificanceBody {
    kind: ModelKind,
    significance: Significance,
}

pub fn write_report(out: &OutputLayout, provenance: &Provenance, report: &EvaluationReport) -> Result<()> {
    write_stamped(&out.report(report.kind), provenance, &ReportBody { report: report.clone() })
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    Ok(read_stamped::<ReportBody>(path)?.1.report)
}

pub fn write_importance(out: &OutputLayout, provenance: &Provenance, imp: &ModelImportance) -> Result<()> {
    write_stamped(&out.importance(imp.kind), provenance, imp)
}

pub fn write_significance(out: &OutputLayout, provenance: &Provenance, kind: ModelKind, s: &Significance) -> Result<()> {
    write_stamped(
        &out.significance(kind),
        provenance,
        &SignificanceBody {
            kind,
            significance: *s,
        },
    )
}

pub fn write_model(out: &OutputLayout, config: &ExperimentConfig, model: &TrainedModel) -> Result<()> {
    let env = ModelEnvelope::new(model.clone(), config.schema.version(), provenance(config));
    files::write_model(&out.model(model.kind), &env)
}

/// Reports found under `reports/`, in table order.
pub fn collect_reports(out: &OutputLayout) -> Result<Vec<EvaluationReport>> {
    let mut reports = Vec::new();
    for kind in ModelKind::ALL {
        let path = out.report(kind);
        if path.exists() {
            reports.push(read_report(&path)?);
        }
    }
    Ok(reports)
}

fn significance_csv(reports: &[EvaluationReport], provenance: &Provenance) -> String {
    let mut s = provenance.comment_line();
    s.push_str("\nkind,statistic,n_permutations,p_value,alpha,significant\n");
    for r in reports {
        let stat = match r.statistic {
            Statistic::F1 => "f1",
            Statistic::Recall => "recall",
        };
        s.push_str(&format!(
            "{},{stat},{},{},{},{}\n",
            r.kind, r.n_permutations, r.p_value, r.alpha, r.significant_at_alpha
        ));
    }
    s
}

/// Rewrites the combined table, its CSV variant and the significance
/// summary from the per-model reports on disk.
pub fn write_summaries(out: &OutputLayout, provenance: &Provenance) -> Result<Vec<EvaluationReport>> {
    let reports = collect_reports(out)?;
    files::write_atomic(&out.table(), files::fixed_width_table(&reports, provenance).as_bytes())?;
    files::write_atomic(&out.table_csv(), files::report_csv(&reports, provenance)?.as_bytes())?;
    files::write_atomic(&out.significance_summary(), significance_csv(&reports, provenance).as_bytes())?;
    Ok(reports)
}

/// Runs the whole experiment for all five kinds and writes every output file.
pub fn run_full_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome, StageError> {
    let outcome = run_experiment(config, &ModelKind::ALL)?;
    let out = OutputLayout::new(out_dir);
    let prov = provenance(config);
    files::write_dataset(&out.dataset(), &outcome.dataset, &prov).stage("write")?;
    for m in &outcome.models {
        write_model(&out, config, &m.model).stage("write")?;
        write_report(&out, &prov, &m.report).stage("write")?;
        write_importance(&out, &prov, &m.importance).stage("write")?;
        write_significance(&out, &prov, m.model.kind, &m.significance).stage("write")?;
    }
    write_summaries(&out, &prov).stage("write")?;
    Ok(outcome)
}

/// Loads a model file and checks it was trained under `config`'s schema.
pub fn load_model(path: &Path, config: &ExperimentConfig) -> Result<TrainedModel> {
    let env = files::read_model(path)?;
    if env.schema_version != config.schema.version() {
        return Err(Error::Invalid(format!(
            "{}: model was trained under schema version {}, current is {}",
            path.display(),
            env.schema_version,
            config.schema.version()
        )));
    }
    Ok(env.model)
}
