//! Weighted predicate rules and the line-oriented rule-file grammar.
//!
//! ```text
//! # comment
//! AUTHOR     team-a
//! BASE_LOG_ODDS -3.0
//! NOISE      0.01
//! RULE young: age < 18 => 1.2
//! RULE alone: accompanying_adult = false AND current_city in {C1, C2} => 1.5
//! ```
//!
//! A condition is `<field> <op> <literal>` with `op` one of `=`, `!=`, `<`,
//! `<=`, `>`, `>=` (`==`, `≠`, `≤`, `≥` are accepted spellings) or
//! `<field> in {a, b, ...}`. Literals are integers, `true`/`false`, bare words
//! or double-quoted strings. Statement keywords are case-insensitive.
//!
//! The same statement syntax is used by the tips file, where the right-hand
//! side of `=>` is a quoted string instead of a weight (see [`parse_statements`]).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::logistic;
use crate::profile::{Answer, MigrantProfile};
use crate::schema::{AnswerKind, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::In => "in",
        }
    }

    fn is_ordering(self) -> bool {
        matches!(self, CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Single(Answer),
    Set(Vec<Answer>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub field: String,
    pub op: CmpOp,
    pub value: Operand,
}

impl Condition {
    /// Missing answers never match.
    pub fn matches(&self, profile: &MigrantProfile) -> bool {
        let Some(actual) = profile.field(&self.field) else {
            return false;
        };
        match (&self.op, &self.value) {
            (CmpOp::In, Operand::Set(items)) => items.contains(&actual),
            (op, Operand::Single(expected)) => match (op, &actual, expected) {
                (CmpOp::Eq, a, e) => a == e,
                (CmpOp::Ne, a, e) => a != e,
                (op, Answer::Integer(a), Answer::Integer(e)) => match op {
                    CmpOp::Lt => a < e,
                    CmpOp::Le => a <= e,
                    CmpOp::Gt => a > e,
                    CmpOp::Ge => a >= e,
                    _ => false,
                },
                _ => false,
            },
            _ => false,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ", self.field, self.op.symbol())?;
        match &self.value {
            Operand::Single(a) => write!(f, "{a}"),
            Operand::Set(items) => {
                f.write_str("{")?;
                for (i, a) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Conjunction of conditions; the empty conjunction always matches.
pub fn matches_all(conditions: &[Condition], profile: &MigrantProfile) -> bool {
    conditions.iter().all(|c| c.matches(profile))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub conditions: Vec<Condition>,
    /// Log-odds contribution when the predicate matches.
    pub weight: f64,
}

impl Rule {
    pub fn matches(&self, profile: &MigrantProfile) -> bool {
        matches_all(&self.conditions, profile)
    }

    /// Fields referenced by the predicate.
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.conditions.iter().map(|c| c.field.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub base_log_odds: f64,
    /// Label-flip probability in `[0, 0.5)`.
    pub noise: f64,
    pub author_tag: String,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            base_log_odds: 0.0,
            noise: 0.0,
            author_tag: String::new(),
        }
    }
}

impl RuleSet {
    pub fn validate(&self) -> Result<(), RuleError> {
        if !self.base_log_odds.is_finite() {
            return Err(RuleError::NonFinite { line: 0, what: "BASE_LOG_ODDS" });
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(RuleError::Noise { line: 0, value: self.noise });
        }
        for (i, r) in self.rules.iter().enumerate() {
            if !r.weight.is_finite() {
                return Err(RuleError::NonFinite { line: 0, what: "weight" });
            }
            if self.rules[..i].iter().any(|o| o.id == r.id) {
                return Err(RuleError::DuplicateRule { line: 0, id: r.id.clone() });
            }
        }
        Ok(())
    }

    /// Log-odds of vulnerability before noise.
    pub fn log_odds(&self, profile: &MigrantProfile) -> f64 {
        self.base_log_odds
            + self
                .rules
                .iter()
                .filter(|r| r.matches(profile))
                .map(|r| r.weight)
                .sum::<f64>()
    }

    pub fn probability(&self, profile: &MigrantProfile) -> f64 {
        logistic(self.log_odds(profile))
    }

    /// Probability of a positive label after flip noise.
    pub fn noisy_probability(&self, profile: &MigrantProfile) -> f64 {
        let p = self.probability(profile);
        p * (1.0 - self.noise) + (1.0 - p) * self.noise
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }
}

/// Draws a label: Bernoulli(logistic(log odds)), then flipped with
/// probability `noise`. Consumes exactly two uniforms from `rng`.
pub fn label_profile<R: Rng + ?Sized>(ruleset: &RuleSet, profile: &MigrantProfile, rng: &mut R) -> bool {
    let p = ruleset.probability(profile);
    let draw: f64 = rng.gen();
    let flip: f64 = rng.gen();
    let label = draw < p;
    if flip < ruleset.noise {
        !label
    } else {
        label
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown field \"{field}\"")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: {message}")]
    Type { line: usize, message: String },
    #[error("line {line}: {what} must be finite")]
    NonFinite { line: usize, what: &'static str },
    #[error("line {line}: noise must lie in [0, 0.5), got {value}")]
    Noise { line: usize, value: f64 },
    #[error("line {line}: duplicate rule id \"{id}\"")]
    DuplicateRule { line: usize, id: String },
}

impl RuleError {
    pub fn line(&self) -> usize {
        match self {
            RuleError::Syntax { line, .. }
            | RuleError::UnknownField { line, .. }
            | RuleError::Type { line, .. }
            | RuleError::NonFinite { line, .. }
            | RuleError::Noise { line, .. }
            | RuleError::DuplicateRule { line, .. } => *line,
        }
    }
}

/// One non-blank, non-comment line of a rule or tips file.
#[derive(Debug, Clone, PartialEq)]
pub enum Statement<'a> {
    /// `KEY value` header line, key upper-cased.
    Header { line: usize, key: String, value: &'a str },
    /// `<KEYWORD> <id>: <conditions> => <rhs>`, keyword upper-cased.
    Clause {
        line: usize,
        keyword: String,
        id: &'a str,
        conditions: Vec<Condition>,
        rhs: &'a str,
    },
}

/// Splits a rule-grammar file into statements, validating every condition
/// against `schema`. `clause_keywords` lists the keywords that introduce a
/// clause (`RULE` for rule files, `TIP` for tips).
pub fn parse_statements<'a>(
    source: &'a str,
    schema: &Schema,
    clause_keywords: &[&str],
) -> Result<Vec<Statement<'a>>, RuleError> {
    let mut out = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        let (keyword, rest) = match text.find(char::is_whitespace) {
            Some(pos) => (&text[..pos], text[pos..].trim()),
            None => (text, ""),
        };
        let keyword_upper = keyword.to_ascii_uppercase();
        if clause_keywords.iter().any(|k| k.eq_ignore_ascii_case(keyword)) {
            let (id, body) = rest.split_once(':').ok_or_else(|| RuleError::Syntax {
                line,
                message: format!("expected `{keyword_upper} <id>: <conditions> => <value>`"),
            })?;
            let id = id.trim();
            if id.is_empty() || !id.chars().all(is_word_char) {
                return Err(RuleError::Syntax {
                    line,
                    message: format!("invalid id \"{id}\""),
                });
            }
            let (lhs, rhs) = body.rsplit_once("=>").ok_or_else(|| RuleError::Syntax {
                line,
                message: "missing `=>`".to_string(),
            })?;
            let conditions = parse_conditions(lhs, schema, line)?;
            out.push(Statement::Clause {
                line,
                keyword: keyword_upper,
                id,
                conditions,
                rhs: rhs.trim(),
            });
        } else {
            if rest.is_empty() {
                return Err(RuleError::Syntax {
                    line,
                    message: format!("unexpected `{keyword}`"),
                });
            }
            out.push(Statement::Header {
                line,
                key: keyword_upper,
                value: rest,
            });
        }
    }
    Ok(out)
}

/// Parses a rule file and validates it against `schema`.
pub fn parse_ruleset(source: &str, schema: &Schema) -> Result<RuleSet, RuleError> {
    let mut set = RuleSet::default();
    for stmt in parse_statements(source, schema, &["RULE"])? {
        match stmt {
            Statement::Header { line, key, value } => match key.as_str() {
                "BASE_LOG_ODDS" => set.base_log_odds = parse_real(value, line, "BASE_LOG_ODDS")?,
                "NOISE" => {
                    let noise = parse_real(value, line, "NOISE")?;
                    if !(0.0..0.5).contains(&noise) {
                        return Err(RuleError::Noise { line, value: noise });
                    }
                    set.noise = noise;
                }
                "AUTHOR" => set.author_tag = unquote(value).to_string(),
                other => {
                    return Err(RuleError::Syntax {
                        line,
                        message: format!("unknown header `{other}`"),
                    })
                }
            },
            Statement::Clause {
                line,
                id,
                conditions,
                rhs,
                ..
            } => {
                let weight = parse_real(rhs, line, "weight")?;
                if set.rules.iter().any(|r| r.id == id) {
                    return Err(RuleError::DuplicateRule { line, id: id.to_string() });
                }
                set.rules.push(Rule {
                    id: id.to_string(),
                    conditions,
                    weight,
                });
            }
        }
    }
    Ok(set)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.'
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(s)
}

fn parse_real(text: &str, line: usize, what: &'static str) -> Result<f64, RuleError> {
    let v: f64 = text.trim().parse().map_err(|_| RuleError::Syntax {
        line,
        message: format!("{what}: \"{}\" is not a number", text.trim()),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RuleError::NonFinite { line, what })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Word(&'a str),
    Quoted(&'a str),
    Op(CmpOp),
    LBrace,
    RBrace,
    Comma,
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Token<'_>>, RuleError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        match c {
            '{' | '[' => {
                chars.next();
                tokens.push(Token::LBrace);
            }
            '}' | ']' => {
                chars.next();
                tokens.push(Token::RBrace);
            }
            ',' => {
                chars.next();
                tokens.push(Token::Comma);
            }
            '≠' => {
                chars.next();
                tokens.push(Token::Op(CmpOp::Ne));
            }
            '≤' => {
                chars.next();
                tokens.push(Token::Op(CmpOp::Le));
            }
            '≥' => {
                chars.next();
                tokens.push(Token::Op(CmpOp::Ge));
            }
            '=' | '!' | '<' | '>' => {
                chars.next();
                let next_eq = matches!(chars.peek(), Some(&(_, '=')));
                if next_eq {
                    chars.next();
                }
                let op = match (c, next_eq) {
                    ('=', _) => CmpOp::Eq,
                    ('!', true) => CmpOp::Ne,
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    ('>', true) => CmpOp::Ge,
                    _ => {
                        return Err(RuleError::Syntax {
                            line,
                            message: "stray `!`".to_string(),
                        })
                    }
                };
                tokens.push(Token::Op(op));
            }
            '"' => {
                chars.next();
                let start = i + 1;
                let mut end = None;
                for (j, d) in chars.by_ref() {
                    if d == '"' {
                        end = Some(j);
                        break;
                    }
                }
                let end = end.ok_or_else(|| RuleError::Syntax {
                    line,
                    message: "unterminated string".to_string(),
                })?;
                tokens.push(Token::Quoted(&text[start..end]));
            }
            c if is_word_char(c) || c == '+' => {
                let start = i;
                let mut end = text.len();
                while let Some(&(j, d)) = chars.peek() {
                    if is_word_char(d) || (j == start && d == '+') {
                        chars.next();
                    } else {
                        end = j;
                        break;
                    }
                }
                let word = &text[start..end];
                if word.eq_ignore_ascii_case("in") {
                    tokens.push(Token::Op(CmpOp::In));
                } else {
                    tokens.push(Token::Word(word));
                }
            }
            other => {
                return Err(RuleError::Syntax {
                    line,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(tokens)
}

/// Parses `cond [AND cond]*`, checking fields and literal kinds against `schema`.
pub fn parse_conditions(text: &str, schema: &Schema, line: usize) -> Result<Vec<Condition>, RuleError> {
    let tokens = tokenize(text, line)?;
    let mut conditions = Vec::new();
    let mut pos = 0;
    let syntax = |message: String| RuleError::Syntax { line, message };
    loop {
        let field = match tokens.get(pos) {
            Some(Token::Word(w)) => *w,
            _ => return Err(syntax("expected a field name".to_string())),
        };
        pos += 1;
        let op = match tokens.get(pos) {
            Some(Token::Op(op)) => *op,
            _ => return Err(syntax(format!("expected an operator after `{field}`"))),
        };
        pos += 1;
        let value = if op == CmpOp::In {
            if tokens.get(pos) != Some(&Token::LBrace) {
                return Err(syntax("expected `{` after `in`".to_string()));
            }
            pos += 1;
            let mut items = Vec::new();
            loop {
                match tokens.get(pos) {
                    Some(Token::Word(w)) => items.push(literal(w, false)),
                    Some(Token::Quoted(q)) => items.push(literal(q, true)),
                    Some(Token::RBrace) if items.is_empty() => {
                        return Err(syntax("empty set".to_string()));
                    }
                    _ => return Err(syntax("expected a set item".to_string())),
                }
                pos += 1;
                match tokens.get(pos) {
                    Some(Token::Comma) => pos += 1,
                    Some(Token::RBrace) => {
                        pos += 1;
                        break;
                    }
                    _ => return Err(syntax("expected `,` or `}`".to_string())),
                }
            }
            Operand::Set(items)
        } else {
            let v = match tokens.get(pos) {
                Some(Token::Word(w)) => literal(w, false),
                Some(Token::Quoted(q)) => literal(q, true),
                _ => return Err(syntax(format!("expected a value after `{}`", op.symbol()))),
            };
            pos += 1;
            Operand::Single(v)
        };
        let cond = Condition {
            field: field.to_string(),
            op,
            value,
        };
        check_condition(&cond, schema, line)?;
        conditions.push(cond);
        match tokens.get(pos) {
            None => break,
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("and") => pos += 1,
            Some(_) => return Err(syntax("expected `AND` or end of condition".to_string())),
        }
    }
    Ok(conditions)
}

fn literal(text: &str, quoted: bool) -> Answer {
    if quoted {
        return Answer::Text(text.to_string());
    }
    if let Ok(i) = text.parse::<i64>() {
        Answer::Integer(i)
    } else if text == "true" {
        Answer::Boolean(true)
    } else if text == "false" {
        Answer::Boolean(false)
    } else {
        Answer::Text(text.to_string())
    }
}

fn check_condition(cond: &Condition, schema: &Schema, line: usize) -> Result<(), RuleError> {
    let q = schema.question(&cond.field).ok_or_else(|| RuleError::UnknownField {
        line,
        field: cond.field.clone(),
    })?;
    let type_err = |message: String| Err(RuleError::Type { line, message });
    if cond.op.is_ordering() && q.answer_kind != AnswerKind::Integer {
        return type_err(format!(
            "`{}` needs an integer field, {} is {}",
            cond.op.symbol(),
            cond.field,
            q.answer_kind.name()
        ));
    }
    let items: &[Answer] = match &cond.value {
        Operand::Single(a) => core::slice::from_ref(a),
        Operand::Set(items) => items,
    };
    for item in items {
        let ok = matches!(
            (&q.answer_kind, item),
            (AnswerKind::Integer, Answer::Integer(_))
                | (AnswerKind::Boolean, Answer::Boolean(_))
                | (AnswerKind::Categorical(_), Answer::Text(_))
                | (AnswerKind::FreeText, Answer::Text(_))
        );
        if !ok {
            return type_err(format!(
                "value `{item}` does not fit {} field {}",
                q.answer_kind.name(),
                cond.field
            ));
        }
        if let (AnswerKind::Categorical(opts), Answer::Text(v)) = (&q.answer_kind, item) {
            if !opts.is_empty() && !opts.iter().any(|o| o == v) {
                return type_err(format!("\"{v}\" is not an option of {}", cond.field));
            }
        }
    }
    Ok(())
}
