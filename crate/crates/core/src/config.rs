//! TOML run configuration. Every section is optional and defaults to the
//! library defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::dataset::DatasetConfig;
use crate::dynamics::{DynamicsParams, TaskDescription};
use crate::metrics::MetricsConfig;
use crate::plancontact::TrustRegion;
use crate::planners::PlannerConfig;
use crate::rollout::RolloutConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("cannot parse {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskDescription,
    pub params: DynamicsParams,
    pub planner: PlannerConfig,
    pub trust_region: TrustRegion,
    pub rollout: RolloutConfig,
    pub dataset: DatasetConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: origin.clone(),
            msg: e.to_string(),
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: origin,
                msg: e.to_string(),
            })?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml_str(&text, &origin)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.task.validate().map_err(|e| inv(e.to_string()))?;
        self.params
            .validate(&self.task)
            .map_err(|e| inv(e.to_string()))?;
        self.planner.validate().map_err(|e| inv(e.to_string()))?;
        self.rollout.validate().map_err(|e| inv(e.to_string()))?;
        self.dataset.validate().map_err(|e| inv(e.to_string()))?;
        self.metrics.validate().map_err(|e| inv(e.to_string()))?;
        if !(self.trust_region.delta_max > 0.0) {
            return Err(inv("trust_region.delta_max must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
