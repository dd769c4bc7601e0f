//! File formats: dataset CSV with a JSON sidecar, the model envelope, and
//! report exports.
//!
//! Every number is written in Rust's shortest round-trip form and parsed back
//! with correct rounding, so files reproduce the in-memory values bit for bit
//! on any platform.

use std::fs;
use std::io::Write;
use std::path::Path;

use migtriage_core::dataset::{content_hash, DatasetMetadata, LabeledRow};
use migtriage_core::metrics::{render_table, TABLE_HEADER};
use migtriage_core::{EvaluationReport, FeatureLayout, FeatureVector, LabeledDataset, Split, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const DATASET_FORMAT: &str = "migtriage-dataset";
const MODEL_FORMAT: &str = "migtriage-model";
const FORMAT_VERSION: u32 = 1;

/// Provenance attached to every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config_hash: config_hash.into(),
        }
    }

    /// `# migtriage <version> seed=<seed> config=<hash>`
    pub fn comment_line(&self) -> String {
        format!("# migtriage {} seed={} config={}", self.tool_version, self.seed, self.config_hash)
    }
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetSidecar {
    format: String,
    format_version: u32,
    provenance: Provenance,
    metadata: DatasetMetadata,
    layout: FeatureLayout,
}

/// Sidecar path for a dataset CSV: `data.csv` → `data.meta.json`.
pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("meta.json")
}

/// Writes `<path>` (header row of column names, then `label` and `split`)
/// and its sidecar.
pub fn write_dataset(path: &Path, dataset: &LabeledDataset, provenance: &Provenance) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = dataset.layout.column_names();
    header.push("label".into());
    header.push("split".into());
    w.write_record(&header).map_err(|e| Error::parse(path, e))?;
    for row in &dataset.rows {
        let mut record: Vec<String> = row.features.values.iter().map(|v| v.to_string()).collect();
        record.push(if row.label { "1" } else { "0" }.into());
        record.push(row.split.as_str().into());
        w.write_record(&record).map_err(|e| Error::parse(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e.error()))?;
    write_atomic(path, &bytes)?;
    let sidecar = DatasetSidecar {
        format: DATASET_FORMAT.into(),
        format_version: FORMAT_VERSION,
        provenance: provenance.clone(),
        metadata: dataset.metadata.clone(),
        layout: dataset.layout.clone(),
    };
    write_atomic(&sidecar_path(path), to_json(&sidecar).as_bytes())
}

/// Reads a dataset and checks it against the hashes in its sidecar.
pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let sidecar: DatasetSidecar = read_json(&sidecar_path(path))?;
    if sidecar.format != DATASET_FORMAT || sidecar.format_version != FORMAT_VERSION {
        return Err(Error::parse(&sidecar_path(path), "not a version 1 dataset sidecar"));
    }
    let layout = sidecar.layout;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut expected = layout.column_names();
    expected.push("label".into());
    expected.push("split".into());
    if header != expected {
        return Err(Error::parse(path, "header does not match the sidecar layout"));
    }
    let n = layout.len();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e))?;
        let bad = |what: &str| Error::parse(path, format!("data row {}: {what}", i + 1));
        let values = (0..n)
            .map(|j| record[j].parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<Vec<f64>>>()?;
        let label = match &record[n] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("label must be 0 or 1")),
        };
        let split = Split::parse(&record[n + 1]).ok_or_else(|| bad("unknown split"))?;
        rows.push(LabeledRow {
            features: FeatureVector { values },
            label,
            split,
        });
    }
    if content_hash(&rows) != sidecar.metadata.content_hash {
        return Err(Error::parse(path, "content hash does not match the sidecar"));
    }
    let dataset = LabeledDataset::new(layout, rows, sidecar.metadata.clone());
    debug_assert_eq!(dataset.metadata, sidecar.metadata);
    Ok(dataset)
}

/// Serialized model with enough context to check compatibility on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub format: String,
    pub format_version: u32,
    pub provenance: Provenance,
    pub schema_version: String,
    pub model: TrainedModel,
}

impl ModelEnvelope {
    pub fn new(model: TrainedModel, schema_version: &str, provenance: Provenance) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            format_version: FORMAT_VERSION,
            provenance,
            schema_version: schema_version.into(),
            model,
        }
    }
}

pub fn write_model(path: &Path, envelope: &ModelEnvelope) -> Result<()> {
    write_atomic(path, to_json(envelope).as_bytes())
}

pub fn read_model(path: &Path) -> Result<ModelEnvelope> {
    let env: ModelEnvelope = read_json(path)?;
    if env.format != MODEL_FORMAT || env.format_version != FORMAT_VERSION {
        return Err(Error::parse(path, "not a version 1 model file"));
    }
    Ok(env)
}

/// Header and one line per report, in the order given.
pub fn fixed_width_table(reports: &[EvaluationReport], provenance: &Provenance) -> String {
    format!("{}\n{}", provenance.comment_line(), render_table(reports))
}

/// Machine-readable variant of the table with unrounded rates.
pub fn report_csv(reports: &[EvaluationReport], provenance: &Provenance) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record([
        "kind",
        "algorithm",
        "f1",
        "accuracy",
        "recall",
        "precision",
        "threshold",
        "tn",
        "fp",
        "fn",
        "tp",
        "predicted_positive",
        "p_value",
        "alpha",
        "significant",
    ])
    .map_err(err)?;
    for r in reports {
        let c = &r.confusion;
        w.write_record([
            r.kind.as_str().to_string(),
            r.kind.display_name().to_string(),
            r.f1.to_string(),
            r.accuracy.to_string(),
            r.recall.to_string(),
            r.precision.to_string(),
            r.threshold.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tp.to_string(),
            r.predicted_positive_count.to_string(),
            r.p_value.to_string(),
            r.alpha.to_string(),
            r.significant_at_alpha.to_string(),
        ])
        .map_err(err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| err(e.into_error().into()))?).expect("utf-8");
    Ok(format!("{}\n{body}", provenance.comment_line()))
}

/// Column names of the fixed-width table, for checks by callers.
pub fn table_columns() -> Vec<&'static str> {
    let mut cols = vec!["Algorithm", "F1 Score", "Accuracy"];
    cols.extend(TABLE_HEADER.split_whitespace().skip(4));
    cols
}
