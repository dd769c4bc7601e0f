//! Service settings file, with environment-variable overrides.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::auth::Role;
use crate::config::{default_experiment_config, load_experiment, read_text, ExperimentConfig};
use crate::error::{Error, Result};
use crate::tips::{default_tips, load_tips, SafetyTip};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceFile {
    listen: Option<String>,
    data_dir: Option<PathBuf>,
    tokens: Option<PathBuf>,
    experiment: Option<PathBuf>,
    tips: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokensFile {
    tokens: BTreeMap<String, Role>,
}

/// Everything `serve` needs, with paths resolved.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub tokens: BTreeMap<String, Role>,
    /// Default synthetic experiment used by training requests.
    pub experiment: ExperimentConfig,
    pub tips: Vec<SafetyTip>,
}

pub const ENV_LISTEN: &str = "MIGTRIAGE_LISTEN";
pub const ENV_DATA_DIR: &str = "MIGTRIAGE_DATA_DIR";
pub const ENV_TOKENS: &str = "MIGTRIAGE_TOKENS";
pub const ENV_EXPERIMENT: &str = "MIGTRIAGE_EXPERIMENT";

pub fn parse_tokens(text: &str, path: &Path) -> Result<BTreeMap<String, Role>> {
    let file: TokensFile = toml::from_str(text).map_err(|e| Error::parse(path, e))?;
    if file.tokens.keys().any(|t| t.is_empty()) {
        return Err(Error::parse(path, "empty token"));
    }
    Ok(file.tokens)
}

impl ServiceConfig {
    /// Reads `path`, then applies overrides from `env` (normally the process
    /// environment). Relative paths in the file resolve against its directory;
    /// relative paths from the environment resolve against the working
    /// directory.
    pub fn load(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let file: ServiceFile = toml::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let from_file = |p: Option<PathBuf>| p.map(|p| base.join(p));

        let listen = env(ENV_LISTEN).or(file.listen).unwrap_or_else(|| "127.0.0.1:8080".into());
        let listen: SocketAddr = listen
            .parse()
            .map_err(|_| Error::parse(path, format!("invalid listen address \"{listen}\"")))?;
        let data_dir = env(ENV_DATA_DIR)
            .map(PathBuf::from)
            .or(from_file(file.data_dir))
            .ok_or_else(|| Error::parse(path, "data_dir is required"))?;
        let tokens_path = env(ENV_TOKENS)
            .map(PathBuf::from)
            .or(from_file(file.tokens))
            .ok_or_else(|| Error::parse(path, "tokens is required"))?;
        let tokens = parse_tokens(&read_text(&tokens_path)?, &tokens_path)?;
        let experiment = match env(ENV_EXPERIMENT).map(PathBuf::from).or(from_file(file.experiment)) {
            Some(p) => load_experiment(&p)?,
            None => default_experiment_config(),
        };
        let tips = match from_file(file.tips) {
            Some(p) => load_tips(&p, &experiment.schema)?,
            None => default_tips(&experiment.schema),
        };
        Ok(Self {
            listen,
            data_dir,
            tokens,
            experiment,
            tips,
        })
    }

    /// Settings for tests and embedding: default experiment and tips.
    pub fn with_defaults(data_dir: PathBuf, tokens: BTreeMap<String, Role>) -> Self {
        let experiment = default_experiment_config();
        let tips = default_tips(&experiment.schema);
        Self {
            listen: "127.0.0.1:0".parse().expect("literal address"),
            data_dir,
            tokens,
            experiment,
            tips,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn file_values_and_env_overrides() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "tok.toml", "[tokens]\nabc = \"researcher\"\n");
        let cfg = write(
            dir.path(),
            "svc.toml",
            "listen = \"127.0.0.1:9000\"\ndata_dir = \"var\"\ntokens = \"tok.toml\"\n",
        );
        let c = ServiceConfig::load(&cfg, |_| None).unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.data_dir, dir.path().join("var"));
        assert_eq!(c.tokens["abc"], Role::Researcher);
        assert_eq!(c.tips.len(), 5);

        let c = ServiceConfig::load(&cfg, |k| match k {
            ENV_LISTEN => Some("0.0.0.0:1234".into()),
            ENV_DATA_DIR => Some("/elsewhere".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.listen.port(), 1234);
        assert_eq!(c.data_dir, PathBuf::from("/elsewhere"));
    }

    #[test]
    fn unknown_role_is_rejected() {
        let err = parse_tokens("[tokens]\nx = \"admin\"\n", Path::new("t.toml")).unwrap_err();
        assert!(err.to_string().starts_with("t.toml"));
    }

    #[test]
    fn shipped_files_load() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/service.toml");
        let c = ServiceConfig::load(&path, |_| None).unwrap();
        assert_eq!(c.tokens.len(), 4);
        assert_eq!(c.experiment.fingerprint(), default_experiment_config().fingerprint());
    }
}
