//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::API_KEY_ENV;
use crate::corpus::{CorpusFormat, SplitSpec};
use crate::protocol::{NamedEndpoint, ProtocolError, ProtocolRun, ProtocolSettings};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::GoldOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub split: SplitSpec,
    pub protocol: ProtocolSettings,
    pub endpoints: Vec<NamedEndpoint>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Load a config file. Relative paths resolve against the file's directory
    /// and the API key is taken from the environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus.path);
        if let Some(p) = cfg.cache_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(p);
        }
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        for e in &mut cfg.endpoints {
            e.config.api_key = key.clone();
        }
        Ok(cfg)
    }

    pub fn protocol_run(&self) -> Result<ProtocolRun, ProtocolError> {
        ProtocolRun::new(self.protocol.clone(), self.split, self.endpoints.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::Dimension;
    use crate::parser::ParsePolicy;
    use crate::protocol::ProtocolKind;

    const SAMPLE: &str = r#"
cache_dir = ".cache"

[corpus]
path = "data/corpus.csv"
format = "two-annotator"

[split]
seed = 17
train = 706
validation = 176
test = 295

[protocol]
kind = "leave-one-out"
held_out = "Optimism"
policy = "impute-zero"

[[endpoints]]
name = "epoch-1"
base_url = "mock:shift=5"
model_name = "m"

[[endpoints]]
name = "epoch-2"
base_url = "mock:identity"
model_name = "m"
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = Config::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.corpus.format, CorpusFormat::TwoAnnotator);
        assert_eq!(cfg.protocol.kind, ProtocolKind::LeaveOneOut);
        assert_eq!(cfg.protocol.held_out, Some(Dimension::Optimism));
        assert_eq!(cfg.protocol.policy, ParsePolicy::ImputeZero);
        assert_eq!(cfg.endpoints.len(), 2);
        let run = cfg.protocol_run().unwrap();
        assert_eq!(run.selection_dimensions().len(), 9);
        let again = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn leakage_rejected_at_load() {
        let text = SAMPLE.replace(
            "policy = \"impute-zero\"",
            "policy = \"impute-zero\"\nselection_dimensions = [\"Anger\", \"Optimism\"]",
        );
        let cfg = Config::from_toml(&text).unwrap();
        assert!(cfg.protocol_run().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml(&format!("bogus = 1\n{SAMPLE}")).is_err());
    }
}
