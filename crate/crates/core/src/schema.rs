//! Survey schema and the closed city registry.
//!
//! The seven core profile fields are addressed by fixed question ids (see
//! [`CORE_FIELDS`]); every other question is stored as an extended answer on
//! the profile. A categorical question declared without options takes its
//! levels from the [`CityRegistry`].

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AGE: &str = "age";
pub const SEX: &str = "sex";
pub const CITY_OF_BIRTH: &str = "city_of_birth";
pub const CURRENT_CITY: &str = "current_city";
pub const DURATION_MONTHS: &str = "duration_months";
pub const MARITAL_STATUS: &str = "marital_status";
pub const ACCOMPANYING_ADULT: &str = "accompanying_adult";

/// Question ids backed by dedicated [`MigrantProfile`](crate::MigrantProfile) fields.
pub const CORE_FIELDS: [&str; 7] = [
    AGE,
    SEX,
    CITY_OF_BIRTH,
    CURRENT_CITY,
    DURATION_MONTHS,
    MARITAL_STATUS,
    ACCOMPANYING_ADULT,
];

pub fn is_core_field(id: &str) -> bool {
    CORE_FIELDS.contains(&id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    ProfileScreening,
    MigrationBackground,
    SrhKnowledge,
    MedicalHistory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "options")]
pub enum AnswerKind {
    Integer,
    /// Enumerated options. Empty means "levels come from the city registry".
    Categorical(Vec<String>),
    Boolean,
    FreeText,
}

impl AnswerKind {
    pub fn name(&self) -> &'static str {
        match self {
            AnswerKind::Integer => "integer",
            AnswerKind::Categorical(_) => "categorical",
            AnswerKind::Boolean => "boolean",
            AnswerKind::FreeText => "free_text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub text: String,
    pub topic: Topic,
    pub answer_kind: AnswerKind,
    pub is_ml_feature: bool,
}

impl QuestionSpec {
    /// True for categorical questions whose levels are city codes.
    pub fn is_city_valued(&self) -> bool {
        matches!(&self.answer_kind, AnswerKind::Categorical(opts) if opts.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("duplicate question id \"{0}\"")]
    DuplicateQuestion(String),
    #[error("question \"{0}\" is marked as an ML feature but has a free-text answer")]
    FreeTextFeature(String),
    #[error("question \"{id}\" must have answer kind {expected}")]
    CoreFieldKind { id: String, expected: &'static str },
    #[error("duplicate city code \"{0}\"")]
    DuplicateCity(String),
    #[error("categorical question \"{0}\" lists the same option twice")]
    DuplicateOption(String),
}

/// Validated, versioned list of survey questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    version: String,
    questions: Vec<QuestionSpec>,
}

impl Schema {
    pub fn new(version: impl Into<String>, questions: Vec<QuestionSpec>) -> Result<Self, SchemaError> {
        validate_questions(&questions)?;
        Ok(Self {
            version: version.into(),
            questions,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn feature_questions(&self) -> impl Iterator<Item = &QuestionSpec> {
        self.questions.iter().filter(|q| q.is_ml_feature)
    }
}

pub(crate) fn validate_questions(questions: &[QuestionSpec]) -> Result<(), SchemaError> {
    let mut seen = BTreeSet::new();
    for q in questions {
        if !seen.insert(q.id.as_str()) {
            return Err(SchemaError::DuplicateQuestion(q.id.clone()));
        }
        if q.is_ml_feature && q.answer_kind == AnswerKind::FreeText {
            return Err(SchemaError::FreeTextFeature(q.id.clone()));
        }
        if let AnswerKind::Categorical(opts) = &q.answer_kind {
            let distinct: BTreeSet<&String> = opts.iter().collect();
            if distinct.len() != opts.len() {
                return Err(SchemaError::DuplicateOption(q.id.clone()));
            }
        }
        let expected = match q.id.as_str() {
            AGE | DURATION_MONTHS => Some(("integer", matches!(q.answer_kind, AnswerKind::Integer))),
            ACCOMPANYING_ADULT => Some(("boolean", matches!(q.answer_kind, AnswerKind::Boolean))),
            SEX | MARITAL_STATUS => Some((
                "categorical with options",
                matches!(&q.answer_kind, AnswerKind::Categorical(o) if !o.is_empty()),
            )),
            CITY_OF_BIRTH | CURRENT_CITY => Some((
                "categorical without options (city registry)",
                q.is_city_valued(),
            )),
            _ => None,
        };
        if let Some((expected, false)) = expected {
            return Err(SchemaError::CoreFieldKind {
                id: q.id.clone(),
                expected,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct City {
    pub code: String,
    pub name: String,
}

/// Closed, ordered set of known cities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityRegistry {
    cities: Vec<City>,
}

impl CityRegistry {
    pub fn new(cities: Vec<City>) -> Result<Self, SchemaError> {
        let mut seen = BTreeSet::new();
        for c in &cities {
            if !seen.insert(c.code.as_str()) {
                return Err(SchemaError::DuplicateCity(c.code.clone()));
            }
        }
        Ok(Self { cities })
    }

    pub fn cities(&self) -> &[City] {
        &self.cities
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.cities.iter().map(|c| c.code.as_str())
    }

    pub fn contains(&self, code: &str) -> bool {
        self.cities.iter().any(|c| c.code == code)
    }
}
