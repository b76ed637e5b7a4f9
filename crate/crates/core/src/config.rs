//! TOML run configuration.
//!
//! ```toml
//! [filter]
//! ca_threshold = 0.31
//!
//! [lca]
//! stability_margin = 300
//!
//! [oracle]
//! human_error = 0.0
//!
//! [data]
//! truth = "truth.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lca::{LcaConfig, LcaError};
use crate::matchers::SimOracleConfig;
use crate::pipeline::FilterConfig;
use crate::sim::{SimConfig, SimError};
use crate::stats::Estimator;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// Input files referenced by a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub manifest: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    /// `annotation_id,individual_id` CSV backing the simulated oracles.
    pub truth: Option<PathBuf>,
    /// `annotation_id,event` CSV for capture-recapture.
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub filter: FilterConfig,
    pub lca: LcaConfig,
    pub oracle: SimOracleConfig,
    pub estimate: EstimateConfig,
    pub sim: SimConfig,
    pub data: DataPaths,
}

fn invalid(section: &str, field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: format!("{section}.{field}"),
        reason: reason.to_string(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.data.manifest,
                &mut cfg.data.cameras,
                &mut cfg.data.truth,
                &mut cfg.data.events,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter
            .validate()
            .map_err(|e| invalid("filter", e.field(), &e))?;
        self.lca.validate().map_err(|e| match e {
            LcaError::Config { field, reason } => invalid("lca", field, reason),
            other => invalid("lca", "?", other),
        })?;
        self.oracle
            .validate()
            .map_err(|(field, reason)| invalid("oracle", field, reason))?;
        self.sim.validate().map_err(|e| match e {
            SimError::Config { field, reason } => invalid("sim", field, reason),
            other => invalid("sim", "?", other),
        })?;
        Ok(())
    }

    /// Use one seed for every randomized component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.lca.seed = seed;
        self.oracle.seed = seed;
        self.sim.seed = seed;
        self
    }
}
