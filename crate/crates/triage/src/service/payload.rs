//! Survey payloads: a flat JSON object keyed by question id.

use migtriage_core::profile::FieldIssue;
use migtriage_core::schema::{self, CORE_FIELDS};
use migtriage_core::{Answer, AnswerKind, CityRegistry, MigrantProfile, Schema, ValidationError};
use serde_json::{Map, Value};

fn issue(field: &str, message: impl Into<String>) -> FieldIssue {
    FieldIssue {
        field: field.into(),
        message: message.into(),
    }
}

fn answer_from_json(kind: &AnswerKind, v: &Value) -> Option<Answer> {
    match (kind, v) {
        (AnswerKind::Integer, Value::Number(n)) => n.as_i64().map(Answer::Integer),
        (AnswerKind::Boolean, Value::Bool(b)) => Some(Answer::Boolean(*b)),
        (AnswerKind::Categorical(_) | AnswerKind::FreeText, Value::String(s)) => Some(Answer::Text(s.clone())),
        _ => None,
    }
}

/// Builds a profile from a payload and validates it, collecting every
/// failing field. The seven core fields are required; other questions are
/// optional, `null` meaning unanswered.
pub fn parse_profile(payload: &Value, schema: &Schema, registry: &CityRegistry) -> Result<MigrantProfile, ValidationError> {
    let Some(obj) = payload.as_object() else {
        return Err(ValidationError {
            issues: vec![issue("", "payload must be a JSON object")],
        });
    };
    let mut issues = Vec::new();
    let mut extended = std::collections::BTreeMap::new();
    for (key, value) in obj {
        if value.is_null() || CORE_FIELDS.contains(&key.as_str()) {
            continue;
        }
        match schema.question(key) {
            None => issues.push(issue(key, "not a question in the schema")),
            Some(q) => match answer_from_json(&q.answer_kind, value) {
                Some(a) => {
                    extended.insert(key.clone(), a);
                }
                None => issues.push(issue(key, format!("expected a {} answer", q.answer_kind.name()))),
            },
        }
    }

    let mut core = Map::new();
    for field in CORE_FIELDS {
        let kind = schema.question(field).map(|q| &q.answer_kind);
        match (obj.get(field), kind) {
            (None | Some(Value::Null), _) => issues.push(issue(field, "required")),
            (Some(v), Some(kind)) if answer_from_json(kind, v).is_none() => {
                issues.push(issue(field, format!("expected a {} answer", kind.name())))
            }
            (Some(v), _) => {
                core.insert(field.into(), v.clone());
            }
        }
    }
    if !issues.is_empty() {
        return Err(sorted(issues, schema));
    }

    let profile = MigrantProfile {
        age: core[schema::AGE].as_i64().unwrap_or_default(),
        sex: text(&core, schema::SEX),
        city_of_birth: text(&core, schema::CITY_OF_BIRTH),
        current_city: text(&core, schema::CURRENT_CITY),
        duration_months: core[schema::DURATION_MONTHS].as_i64().unwrap_or_default(),
        marital_status: text(&core, schema::MARITAL_STATUS),
        accompanying_adult: core[schema::ACCOMPANYING_ADULT].as_bool().unwrap_or_default(),
        extended_answers: extended,
    };
    profile.validate(schema, registry)?;
    Ok(profile)
}

fn text(core: &Map<String, Value>, field: &str) -> String {
    core[field].as_str().unwrap_or_default().to_string()
}

fn sorted(mut issues: Vec<FieldIssue>, schema: &Schema) -> ValidationError {
    let order = |f: &str| schema.questions().iter().position(|q| q.id == f).unwrap_or(usize::MAX);
    issues.sort_by(|a, b| order(&a.field).cmp(&order(&b.field)).then(a.field.cmp(&b.field)));
    ValidationError { issues }
}

/// Inverse of [`parse_profile`].
pub fn profile_to_json(profile: &MigrantProfile) -> Value {
    let mut obj = Map::new();
    for field in CORE_FIELDS {
        let v = match profile.field(field).expect("core field") {
            Answer::Integer(i) => Value::from(i),
            Answer::Boolean(b) => Value::from(b),
            Answer::Text(s) => Value::from(s),
        };
        obj.insert(field.into(), v);
    }
    for (k, a) in &profile.extended_answers {
        let v = match a {
            Answer::Integer(i) => Value::from(*i),
            Answer::Boolean(b) => Value::from(*b),
            Answer::Text(s) => Value::from(s.clone()),
        };
        obj.insert(k.clone(), v);
    }
    Value::Object(obj)
}
