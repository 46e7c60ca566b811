//! TOML run configuration shared by the command-line harness.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::TrainConfig;
use crate::synth::GeneratorConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `[generator]` drives corpus synthesis; `[train]` and its subsections
/// drive training, evaluation and ablation. Missing keys take defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Overrides both the generator and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("[generator]\nn_actions = 4\n\n[train.stages.local]\nepochs = 2\n", "t").unwrap();
        assert_eq!(c.generator.n_actions, 4);
        assert_eq!(c.generator.n_objects, 5);
        assert_eq!(c.train.stages.local.epochs, 2);
        assert_eq!(c.train.stages.local.lr, 0.0004);
        assert_eq!(c.train.stages.temporal, TrainConfig::default().stages.temporal);
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let c = RunConfig::default().with_seed(99);
        assert_eq!(RunConfig::from_toml(&c.to_toml(), "t").unwrap(), c);
        assert!(RunConfig::from_toml("[train]\nbogus = 1\n", "t").is_err());
        assert!(RunConfig::from_toml("[train.stages.joint]\nbogus = 1\n", "t").is_err());
    }
}
