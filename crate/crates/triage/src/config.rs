//! Loaders for the human-editable configuration files and the shipped
//! defaults under `data/`.
//!
//! Relative paths inside an experiment file resolve against the directory of
//! that file.

use std::fs;
use std::path::{Path, PathBuf};

use migtriage_core::fingerprint;
use migtriage_core::metrics::ThresholdPolicy;
use migtriage_core::schema::City;
use migtriage_core::{
    parse_ruleset, AnswerKind, CityRegistry, GenerationConfig, Hyperparameters, PopulationSpec, QuestionSpec,
    RuleSet, Schema, SplitRatio, SplitRules, Topic,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SCHEMA: &str = include_str!("../data/schema.toml");
pub const DEFAULT_CITIES: &str = include_str!("../data/cities.toml");
pub const DEFAULT_POPULATION: &str = include_str!("../data/population.toml");
pub const DEFAULT_HYPERPARAMETERS: &str = include_str!("../data/hyperparameters.toml");
pub const DEFAULT_RULES: &str = include_str!("../data/rules/default.rules");
pub const VALIDATION_RULES: &str = include_str!("../data/rules/validation.rules");
pub const TEST_RULES: &str = include_str!("../data/rules/test.rules");
pub const DEFAULT_TIPS: &str = include_str!("../data/tips.rules");
pub const DEFAULT_EXPERIMENT: &str = include_str!("../data/experiment.toml");

/// Directory holding the shipped data files.
pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn from_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::parse(path, e.message()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    version: String,
    #[serde(default)]
    question: Vec<QuestionEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionEntry {
    id: String,
    text: String,
    topic: Topic,
    answer_kind: String,
    options: Option<Vec<String>>,
    is_ml_feature: bool,
}

pub fn parse_schema(text: &str, path: &Path) -> Result<Schema> {
    let file: SchemaFile = from_toml(text, path)?;
    let mut questions = Vec::with_capacity(file.question.len());
    for q in file.question {
        let kind = match (q.answer_kind.as_str(), q.options) {
            ("categorical", options) => AnswerKind::Categorical(options.unwrap_or_default()),
            (_, Some(_)) => {
                return Err(Error::parse(path, format!("question \"{}\": options given for a non-categorical answer", q.id)))
            }
            ("integer", None) => AnswerKind::Integer,
            ("boolean", None) => AnswerKind::Boolean,
            ("free_text", None) => AnswerKind::FreeText,
            (other, None) => {
                return Err(Error::parse(path, format!("question \"{}\": unknown answer_kind \"{other}\"", q.id)))
            }
        };
        questions.push(QuestionSpec {
            id: q.id,
            text: q.text,
            topic: q.topic,
            answer_kind: kind,
            is_ml_feature: q.is_ml_feature,
        });
    }
    Ok(Schema::new(file.version, questions)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CitiesFile {
    #[serde(default)]
    city: Vec<City>,
}

pub fn parse_cities(text: &str, path: &Path) -> Result<CityRegistry> {
    let file: CitiesFile = from_toml(text, path)?;
    Ok(CityRegistry::new(file.city)?)
}

pub fn parse_population(text: &str, path: &Path) -> Result<PopulationSpec> {
    from_toml(text, path)
}

pub fn parse_hyperparameters(text: &str, path: &Path) -> Result<Hyperparameters> {
    let hp: Hyperparameters = from_toml(text, path)?;
    hp.validate()?;
    Ok(hp)
}

pub fn parse_rules(text: &str, schema: &Schema, path: &Path) -> Result<RuleSet> {
    parse_ruleset(text, schema).map_err(|source| Error::Rules {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    parse_schema(&read_text(path)?, path)
}

pub fn load_cities(path: &Path) -> Result<CityRegistry> {
    parse_cities(&read_text(path)?, path)
}

/// The 27-question schema shipped with the crate.
pub fn default_schema() -> Schema {
    parse_schema(DEFAULT_SCHEMA, Path::new("data/schema.toml")).expect("shipped schema is valid")
}

pub fn default_cities() -> CityRegistry {
    parse_cities(DEFAULT_CITIES, Path::new("data/cities.toml")).expect("shipped registry is valid")
}

/// On-disk form of an experiment configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: u64,
    pub n_total: usize,
    #[serde(default)]
    pub ratio: Option<[f64; 3]>,
    pub schema: PathBuf,
    pub cities: PathBuf,
    pub population: PathBuf,
    pub hyperparameters: PathBuf,
    pub rules: RulesEntry,
    #[serde(default)]
    pub policy: ThresholdPolicy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_repeats")]
    pub importance_repeats: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_permutations() -> usize {
    999
}

fn default_repeats() -> usize {
    10
}

/// `shared` labels every split unless `independent` is set, in which case
/// each split uses its own file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesEntry {
    pub shared: PathBuf,
    #[serde(default)]
    pub independent: bool,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema: Schema,
    pub registry: CityRegistry,
    pub generation: GenerationConfig,
    pub hyperparameters: Hyperparameters,
    pub policy: ThresholdPolicy,
    pub alpha: f64,
    pub n_permutations: usize,
    pub importance_repeats: usize,
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Hash of every setting that can influence an output file.
    pub fn fingerprint(&self) -> String {
        fingerprint::of_json(self)
    }

    pub fn seed(&self) -> u64 {
        self.generation.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generation.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparameters.validate()?;
        self.policy.validate()?;
        self.generation
            .population
            .validate(&self.schema, &self.registry)
            .map_err(|e| Error::Invalid(e.to_string()))?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.importance_repeats == 0 {
            return Err(Error::Invalid("importance_repeats must be positive".into()));
        }
        Ok(())
    }
}

/// Source of the files an experiment file refers to.
trait Files {
    fn read(&self, path: &Path) -> Result<(String, PathBuf)>;
}

struct Disk<'a>(&'a Path);

impl Files for Disk<'_> {
    fn read(&self, path: &Path) -> Result<(String, PathBuf)> {
        let full = self.0.join(path);
        Ok((read_text(&full)?, full))
    }
}

struct Embedded;

impl Files for Embedded {
    fn read(&self, path: &Path) -> Result<(String, PathBuf)> {
        let text = match path.to_str() {
            Some("schema.toml") => DEFAULT_SCHEMA,
            Some("cities.toml") => DEFAULT_CITIES,
            Some("population.toml") => DEFAULT_POPULATION,
            Some("hyperparameters.toml") => DEFAULT_HYPERPARAMETERS,
            Some("rules/default.rules") => DEFAULT_RULES,
            Some("rules/validation.rules") => VALIDATION_RULES,
            Some("rules/test.rules") => TEST_RULES,
            _ => return Err(Error::io(path, std::io::ErrorKind::NotFound.into())),
        };
        Ok((text.to_string(), Path::new("data").join(path)))
    }
}

fn resolve(file: ExperimentFile, files: &dyn Files) -> Result<ExperimentConfig> {
    let (text, path) = files.read(&file.schema)?;
    let schema = parse_schema(&text, &path)?;
    let (text, path) = files.read(&file.cities)?;
    let registry = parse_cities(&text, &path)?;
    let (text, path) = files.read(&file.population)?;
    let population = parse_population(&text, &path)?;
    let (text, path) = files.read(&file.hyperparameters)?;
    let hyperparameters = parse_hyperparameters(&text, &path)?;

    let load_rules = |p: &Path| -> Result<RuleSet> {
        let (text, path) = files.read(p)?;
        parse_rules(&text, &schema, &path)
    };
    let shared = load_rules(&file.rules.shared)?;
    let rules = if file.rules.independent {
        let pick = |p: &Option<PathBuf>| p.as_deref().map(load_rules).unwrap_or_else(|| Ok(shared.clone()));
        SplitRules {
            train: pick(&file.rules.train)?,
            validation: pick(&file.rules.validation)?,
            test: pick(&file.rules.test)?,
        }
    } else {
        SplitRules::shared(shared)
    };

    let ratio = file
        .ratio
        .map(|[train, validation, test]| SplitRatio {
            train,
            validation,
            test,
        })
        .unwrap_or_default();
    let config = ExperimentConfig {
        schema,
        registry,
        generation: GenerationConfig {
            population,
            rules,
            n_total: file.n_total,
            ratio,
            seed: file.seed,
        },
        hyperparameters,
        policy: file.policy,
        alpha: file.alpha,
        n_permutations: file.n_permutations,
        importance_repeats: file.importance_repeats,
        output_dir: file.output_dir,
    };
    config.validate()?;
    Ok(config)
}

/// Loads an experiment file and everything it references.
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let file: ExperimentFile = from_toml(&read_text(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut config = resolve(file, &Disk(base))?;
    if let Some(out) = &config.output_dir {
        config.output_dir = Some(base.join(out));
    }
    Ok(config)
}

/// The shipped experiment: 1334 profiles split 934/200/200 and labeled by
/// the shared default rules. Built from copies of the data files compiled
/// into the binary, so it does not depend on the working directory.
pub fn default_experiment_config() -> ExperimentConfig {
    parse_default_experiment(false)
}

/// Like [`default_experiment_config`], but the validation and test splits
/// are labeled by separately authored rule files.
pub fn independent_authors_config() -> ExperimentConfig {
    parse_default_experiment(true)
}

fn parse_default_experiment(independent: bool) -> ExperimentConfig {
    let path = Path::new("data/experiment.toml");
    let mut file: ExperimentFile = from_toml(DEFAULT_EXPERIMENT, path).expect("shipped experiment file parses");
    file.rules.independent = independent;
    let mut config = resolve(file, &Embedded).expect("shipped experiment is valid");
    config.output_dir = None;
    config
}
