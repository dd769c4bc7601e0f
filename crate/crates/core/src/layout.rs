//! Feature layout and profile encoding.
//!
//! Positions follow schema order for every `is_ml_feature` question. Integer
//! and boolean questions take one identity column; categorical questions take
//! one column per level, in option order (or registry order for city-valued
//! questions). Numeric columns are left raw here; standardization is fitted
//! per training split by the learners.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{Answer, MigrantProfile};
use crate::schema::{validate_questions, AnswerKind, CityRegistry, QuestionSpec, SchemaError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "encoding")]
pub enum Encoding {
    /// Raw value (integers as-is, booleans as 0/1).
    Identity,
    /// 1.0 when the field equals `level`, else 0.0.
    OneHot { level: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub field: String,
    #[serde(flatten)]
    pub encoding: Encoding,
}

impl LayoutEntry {
    /// Column name used in exports: `age`, `sex=F`, ...
    pub fn column_name(&self) -> String {
        match &self.encoding {
            Encoding::Identity => self.field.clone(),
            Encoding::OneHot { level } => format!("{}={}", self.field, level),
        }
    }
}

/// Contiguous block of layout positions produced by one source field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldGroup {
    pub field: String,
    pub positions: Range<usize>,
    pub one_hot: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    entries: Vec<LayoutEntry>,
}

/// Values of one encoded profile, positionally aligned with a [`FeatureLayout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("unknown level \"{value}\" for {field}")]
    UnknownLevel { field: String, value: String },
    #[error("missing value for feature field {0}")]
    MissingValue(String),
    #[error("field {field} expects a {expected} value")]
    WrongKind { field: String, expected: &'static str },
}

impl FeatureLayout {
    pub fn from_entries(entries: Vec<LayoutEntry>) -> Self {
        Self { entries }
    }

    /// Identity layout `f0..f{n-1}` for free-standing numeric data.
    pub fn numeric(n: usize) -> Self {
        Self {
            entries: (0..n)
                .map(|i| LayoutEntry {
                    field: format!("f{i}"),
                    encoding: Encoding::Identity,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn column_names(&self) -> Vec<String> {
        self.entries.iter().map(LayoutEntry::column_name).collect()
    }

    /// Source fields in layout order with their position ranges.
    pub fn field_groups(&self) -> Vec<FieldGroup> {
        let mut groups: Vec<FieldGroup> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.field == e.field => g.positions.end = i + 1,
                _ => groups.push(FieldGroup {
                    field: e.field.clone(),
                    positions: i..i + 1,
                    one_hot: matches!(e.encoding, Encoding::OneHot { .. }),
                }),
            }
        }
        groups
    }

    pub fn fields(&self) -> Vec<String> {
        self.field_groups().into_iter().map(|g| g.field).collect()
    }

    pub fn position(&self, column_name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.column_name() == column_name)
    }

    pub fn field_of(&self, position: usize) -> Option<&str> {
        self.entries.get(position).map(|e| e.field.as_str())
    }

    /// Recovers the categorical level of `field` from an encoded vector, if
    /// exactly one of its one-hot positions is set.
    pub fn decode_categorical<'a>(&'a self, values: &[f64], field: &str) -> Option<&'a str> {
        let mut found = None;
        for (e, v) in self.entries.iter().zip(values) {
            if e.field != field {
                continue;
            }
            if let Encoding::OneHot { level } = &e.encoding {
                if *v == 1.0 {
                    if found.is_some() {
                        return None;
                    }
                    found = Some(level.as_str());
                } else if *v != 0.0 {
                    return None;
                }
            }
        }
        found
    }
}

/// Builds the layout for the feature questions of a schema.
pub fn build_layout(questions: &[QuestionSpec], registry: &CityRegistry) -> Result<FeatureLayout, SchemaError> {
    validate_questions(questions)?;
    let mut entries = Vec::new();
    for q in questions.iter().filter(|q| q.is_ml_feature) {
        match &q.answer_kind {
            AnswerKind::Integer | AnswerKind::Boolean => entries.push(LayoutEntry {
                field: q.id.clone(),
                encoding: Encoding::Identity,
            }),
            AnswerKind::Categorical(options) => {
                let levels: Vec<String> = if options.is_empty() {
                    registry.codes().map(ToString::to_string).collect()
                } else {
                    options.clone()
                };
                entries.extend(levels.into_iter().map(|level| LayoutEntry {
                    field: q.id.clone(),
                    encoding: Encoding::OneHot { level },
                }));
            }
            AnswerKind::FreeText => return Err(SchemaError::FreeTextFeature(q.id.clone())),
        }
    }
    Ok(FeatureLayout { entries })
}

/// Encodes a profile under `layout`.
pub fn encode_profile(profile: &MigrantProfile, layout: &FeatureLayout) -> Result<FeatureVector, EncodeError> {
    let mut values = Vec::with_capacity(layout.len());
    for group in layout.field_groups() {
        let value = profile
            .field(&group.field)
            .ok_or_else(|| EncodeError::MissingValue(group.field.clone()))?;
        let entries = &layout.entries[group.positions.clone()];
        if group.one_hot {
            let Answer::Text(text) = &value else {
                return Err(EncodeError::WrongKind {
                    field: group.field,
                    expected: "categorical",
                });
            };
            let mut matched = false;
            for e in entries {
                let hit = matches!(&e.encoding, Encoding::OneHot { level } if level == text);
                matched |= hit;
                values.push(if hit { 1.0 } else { 0.0 });
            }
            if !matched {
                return Err(EncodeError::UnknownLevel {
                    field: group.field,
                    value: text.clone(),
                });
            }
        } else {
            let v = match value {
                Answer::Integer(i) => i as f64,
                Answer::Boolean(b) => f64::from(u8::from(b)),
                Answer::Text(_) => {
                    return Err(EncodeError::WrongKind {
                        field: group.field,
                        expected: "numeric or boolean",
                    })
                }
            };
            values.extend(entries.iter().map(|_| v));
        }
    }
    Ok(FeatureVector { values })
}
