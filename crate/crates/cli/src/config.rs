//! Shared TOML run configuration: a `[model]` table with the network
//! geometry and a `[train]` table with the optimizer recipe. Missing tables
//! fall back to desk-scale defaults; command-line flags override file keys.

use std::path::Path;

use emoembed::net::EITConfig;
use emoembed::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "EITConfig::desk_scale")]
    pub model: EITConfig,
    #[serde(default = "TrainConfig::desk_defaults")]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: EITConfig::desk_scale(),
            train: TrainConfig::desk_defaults(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("reading config {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        cfg.model
            .validate()
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// File config if given, defaults otherwise, then flag overrides.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}
