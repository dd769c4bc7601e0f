//! One migrant's survey answers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::schema::{self, AnswerKind, CityRegistry, Schema};

pub const MAX_AGE: i64 = 120;

/// Answer to a single survey question. Categorical answers are carried as
/// text and checked against the question's options.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Integer(i64),
    Boolean(bool),
    Text(String),
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Integer(v) => write!(f, "{v}"),
            Answer::Boolean(v) => write!(f, "{v}"),
            Answer::Text(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrantProfile {
    pub age: i64,
    pub sex: String,
    pub city_of_birth: String,
    pub current_city: String,
    pub duration_months: i64,
    pub marital_status: String,
    pub accompanying_adult: bool,
    #[serde(default)]
    pub extended_answers: BTreeMap<String, Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

/// Every failing field of a profile, in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub issues: Vec<FieldIssue>,
}

impl ValidationError {
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.issues.iter().map(|i| i.field.as_str())
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid profile: ")?;
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", issue.field, issue.message)?;
        }
        Ok(())
    }
}

impl core::error::Error for ValidationError {}

impl MigrantProfile {
    /// Value of a core field or extended answer by question id.
    pub fn field(&self, id: &str) -> Option<Answer> {
        Some(match id {
            schema::AGE => Answer::Integer(self.age),
            schema::SEX => Answer::Text(self.sex.clone()),
            schema::CITY_OF_BIRTH => Answer::Text(self.city_of_birth.clone()),
            schema::CURRENT_CITY => Answer::Text(self.current_city.clone()),
            schema::DURATION_MONTHS => Answer::Integer(self.duration_months),
            schema::MARITAL_STATUS => Answer::Text(self.marital_status.clone()),
            schema::ACCOMPANYING_ADULT => Answer::Boolean(self.accompanying_adult),
            other => return self.extended_answers.get(other).cloned(),
        })
    }

    /// Checks range constraints, registry membership and answer kinds.
    pub fn validate(&self, schema: &Schema, registry: &CityRegistry) -> Result<(), ValidationError> {
        let mut issues = Vec::new();
        let mut push = |field: &str, message: String| {
            issues.push(FieldIssue {
                field: field.to_string(),
                message,
            })
        };

        if !(0..=MAX_AGE).contains(&self.age) {
            push(schema::AGE, format!("must be between 0 and {MAX_AGE}, got {}", self.age));
        }
        if self.duration_months < 0 {
            push(
                schema::DURATION_MONTHS,
                format!("must be non-negative, got {}", self.duration_months),
            );
        }
        for (field, code) in [
            (schema::CITY_OF_BIRTH, &self.city_of_birth),
            (schema::CURRENT_CITY, &self.current_city),
        ] {
            if !registry.contains(code) {
                push(field, format!("unknown city code \"{code}\""));
            }
        }
        for (field, value) in [(schema::SEX, &self.sex), (schema::MARITAL_STATUS, &self.marital_status)] {
            if let Some(q) = schema.question(field) {
                if let AnswerKind::Categorical(options) = &q.answer_kind {
                    if !options.iter().any(|o| o == value) {
                        push(field, format!("\"{value}\" is not one of {}", options.join(", ")));
                    }
                }
            }
        }
        for (id, answer) in &self.extended_answers {
            if schema::is_core_field(id) {
                push(id, "core field supplied as an extended answer".to_string());
                continue;
            }
            let Some(q) = schema.question(id) else {
                push(id, "not a question in the schema".to_string());
                continue;
            };
            if let Some(msg) = answer_kind_mismatch(&q.answer_kind, answer, registry) {
                push(id, msg);
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            // Order issues by schema position so messages are stable.
            let order = |f: &str| {
                schema
                    .questions()
                    .iter()
                    .position(|q| q.id == f)
                    .unwrap_or(usize::MAX)
            };
            issues.sort_by(|a, b| order(&a.field).cmp(&order(&b.field)).then(a.field.cmp(&b.field)));
            Err(ValidationError { issues })
        }
    }
}

fn answer_kind_mismatch(kind: &AnswerKind, answer: &Answer, registry: &CityRegistry) -> Option<String> {
    match (kind, answer) {
        (AnswerKind::Integer, Answer::Integer(_)) => None,
        (AnswerKind::Boolean, Answer::Boolean(_)) => None,
        (AnswerKind::FreeText, Answer::Text(_)) => None,
        (AnswerKind::Categorical(opts), Answer::Text(v)) => {
            let ok = if opts.is_empty() {
                registry.contains(v)
            } else {
                opts.iter().any(|o| o == v)
            };
            (!ok).then(|| format!("\"{v}\" is not an allowed option"))
        }
        (kind, _) => Some(format!("expected a {} answer", kind.name())),
    }
}
