//! Sampling distributions for synthetic migrant profiles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{MigrantProfile, MAX_AGE};
use crate::rng::{stream, stream_rng};
use crate::schema::{self, AnswerKind, CityRegistry, Schema};

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IntDistribution {
    /// Uniform over the inclusive range.
    Uniform { low: i64, high: i64 },
    /// Explicit values with probabilities summing to 1.
    Weighted { values: Vec<(i64, f64)> },
}

impl IntDistribution {
    fn support(&self) -> (i64, i64) {
        match self {
            IntDistribution::Uniform { low, high } => (*low, *high),
            IntDistribution::Weighted { values } => (
                values.iter().map(|v| v.0).min().unwrap_or(0),
                values.iter().map(|v| v.0).max().unwrap_or(0),
            ),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match self {
            IntDistribution::Uniform { low, high } => rng.gen_range(*low..=*high),
            IntDistribution::Weighted { values } => {
                let u: f64 = rng.gen();
                *pick(values.iter().map(|(v, w)| (v, *w)), u)
            }
        }
    }

    /// Exact mean, for tests and documentation.
    pub fn mean(&self) -> f64 {
        match self {
            IntDistribution::Uniform { low, high } => (*low as f64 + *high as f64) / 2.0,
            IntDistribution::Weighted { values } => values.iter().map(|(v, w)| *v as f64 * w).sum(),
        }
    }

    fn check(&self, field: &'static str) -> Result<(), PopulationError> {
        match self {
            IntDistribution::Uniform { low, high } if low > high => Err(PopulationError::Invalid {
                field,
                message: format!("empty range {low}..={high}"),
            }),
            IntDistribution::Weighted { values } => check_weights(field, values.iter().map(|v| v.1)),
            _ => Ok(()),
        }
    }
}

/// Probability distribution over categorical levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    pub levels: Vec<(String, f64)>,
}

impl LevelDistribution {
    pub fn uniform<I: IntoIterator<Item = S>, S: Into<String>>(levels: I) -> Self {
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        let w = 1.0 / levels.len() as f64;
        Self {
            levels: levels.into_iter().map(|l| (l, w)).collect(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let u: f64 = rng.gen();
        pick(self.levels.iter().map(|(l, w)| (l, *w)), u).clone()
    }
}

fn pick<'a, T, I: Iterator<Item = (&'a T, f64)>>(items: I, u: f64) -> &'a T {
    let mut acc = 0.0;
    let mut last = None;
    for (item, w) in items {
        acc += w;
        last = Some(item);
        if u < acc {
            return item;
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    last.expect("validated non-empty distribution")
}

fn check_weights(field: &'static str, weights: impl Iterator<Item = f64>) -> Result<(), PopulationError> {
    let mut sum = 0.0;
    let mut n = 0;
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(PopulationError::Invalid {
                field,
                message: format!("weight {w} is not a probability"),
            });
        }
        sum += w;
        n += 1;
    }
    if n == 0 {
        return Err(PopulationError::Invalid {
            field,
            message: "no levels".into(),
        });
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(PopulationError::Invalid {
            field,
            message: format!("weights sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub age: IntDistribution,
    pub sex: LevelDistribution,
    pub city_of_birth: LevelDistribution,
    pub current_city: LevelDistribution,
    pub duration_months: IntDistribution,
    pub marital_status: LevelDistribution,
    /// Probability that an adult family member accompanies the migrant.
    pub accompanying_adult: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PopulationError {
    #[error("population spec for {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

impl PopulationSpec {
    /// Checks weights, supports and level membership against the schema.
    pub fn validate(&self, schema: &Schema, registry: &CityRegistry) -> Result<(), PopulationError> {
        self.age.check(schema::AGE)?;
        self.duration_months.check(schema::DURATION_MONTHS)?;
        let (lo, hi) = self.age.support();
        if lo < 0 || hi > MAX_AGE {
            return Err(PopulationError::Invalid {
                field: schema::AGE,
                message: format!("support {lo}..={hi} leaves 0..={MAX_AGE}"),
            });
        }
        if self.duration_months.support().0 < 0 {
            return Err(PopulationError::Invalid {
                field: schema::DURATION_MONTHS,
                message: "negative durations".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.accompanying_adult) {
            return Err(PopulationError::Invalid {
                field: schema::ACCOMPANYING_ADULT,
                message: format!("{} is not a probability", self.accompanying_adult),
            });
        }
        for (field, dist) in [
            (schema::SEX, &self.sex),
            (schema::CITY_OF_BIRTH, &self.city_of_birth),
            (schema::CURRENT_CITY, &self.current_city),
            (schema::MARITAL_STATUS, &self.marital_status),
        ] {
            check_weights(field, dist.levels.iter().map(|l| l.1))?;
            let allowed = |level: &str| match schema.question(field).map(|q| &q.answer_kind) {
                Some(AnswerKind::Categorical(opts)) if !opts.is_empty() => opts.iter().any(|o| o == level),
                _ => registry.contains(level),
            };
            if let Some((bad, _)) = dist.levels.iter().find(|(l, _)| !allowed(l)) {
                return Err(PopulationError::Invalid {
                    field,
                    message: format!("level \"{bad}\" is outside the field domain"),
                });
            }
        }
        Ok(())
    }
}

/// Draws `n` profiles. Row `i` uses its own stream keyed by `(seed, i)`.
pub fn sample_population(spec: &PopulationSpec, n: usize, seed: u64) -> Vec<MigrantProfile> {
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, stream::POPULATION, i as u64);
            MigrantProfile {
                age: spec.age.sample(&mut rng),
                sex: spec.sex.sample(&mut rng),
                city_of_birth: spec.city_of_birth.sample(&mut rng),
                current_city: spec.current_city.sample(&mut rng),
                duration_months: spec.duration_months.sample(&mut rng),
                marital_status: spec.marital_status.sample(&mut rng),
                accompanying_adult: rng.gen::<f64>() < spec.accompanying_adult,
                extended_answers: BTreeMap::new(),
            }
        })
        .collect()
}
