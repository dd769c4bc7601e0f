//! File formats, the experiment pipeline, the survey store and the HTTP
//! service built on `migtriage-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod files;
pub mod service;
pub mod store;
pub mod tips;

pub use config::{default_experiment_config, independent_authors_config, load_experiment, ExperimentConfig};
pub use error::{Error, Result, StageError};
pub use experiment::{run_experiment, run_full_experiment, ExperimentOutcome};
