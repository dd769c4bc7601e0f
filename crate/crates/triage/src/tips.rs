//! Safety tips: static texts shown to a migrant when every condition of the
//! tip matches their answers. Tips use the rule-file grammar:
//!
//! ```text
//! TIP T1: accompanying_adult = false => "Save the number of a helpline."
//! ```

use std::path::Path;

use migtriage_core::rules::{matches_all, parse_statements, Condition, Statement};
use migtriage_core::{MigrantProfile, RuleError, Schema};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyTip {
    pub id: String,
    pub text: String,
    #[serde(serialize_with = "conditions_text")]
    pub conditions: Vec<Condition>,
}

fn conditions_text<S: serde::Serializer>(conds: &[Condition], s: S) -> std::result::Result<S::Ok, S::Error> {
    let text: Vec<String> = conds.iter().map(|c| c.to_string()).collect();
    s.serialize_str(&text.join(" AND "))
}

impl SafetyTip {
    pub fn applies_to(&self, profile: &MigrantProfile) -> bool {
        matches_all(&self.conditions, profile)
    }
}

/// Parses a tips file. Header lines are not allowed.
pub fn parse_tips(source: &str, schema: &Schema) -> Result<Vec<SafetyTip>, RuleError> {
    let mut tips: Vec<SafetyTip> = Vec::new();
    for stmt in parse_statements(source, schema, &["TIP"])? {
        match stmt {
            Statement::Header { line, key, .. } => {
                return Err(RuleError::Syntax {
                    line,
                    message: format!("unexpected `{key}` in a tips file"),
                })
            }
            Statement::Clause {
                line,
                id,
                conditions,
                rhs,
                ..
            } => {
                let text = rhs
                    .strip_prefix('"')
                    .and_then(|t| t.strip_suffix('"'))
                    .ok_or_else(|| RuleError::Syntax {
                        line,
                        message: "tip text must be a double-quoted string".into(),
                    })?;
                if tips.iter().any(|t| t.id == id) {
                    return Err(RuleError::DuplicateRule { line, id: id.into() });
                }
                tips.push(SafetyTip {
                    id: id.into(),
                    text: text.into(),
                    conditions,
                });
            }
        }
    }
    Ok(tips)
}

pub fn load_tips(path: &Path, schema: &Schema) -> Result<Vec<SafetyTip>> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tips(&source, schema).map_err(|source| Error::Rules {
        path: path.to_path_buf(),
        source,
    })
}

pub fn default_tips(schema: &Schema) -> Vec<SafetyTip> {
    parse_tips(crate::config::DEFAULT_TIPS, schema).expect("bundled tips parse")
}

pub fn matching<'a>(tips: &'a [SafetyTip], profile: &MigrantProfile) -> Vec<&'a SafetyTip> {
    tips.iter().filter(|t| t.applies_to(profile)).collect()
}
