//! Run configuration file.
//!
//! ```json
//! {
//!   "env": "pendulum",
//!   "algorithm": "hybrid-stoch",
//!   "episodes": 30,
//!   "seeds": [0, 1, 2, 3, 4],
//!   "out_dir": "runs/stoch",
//!   "record_wall_time": false,
//!   "save_checkpoints": false,
//!   "hyperparameters": { "horizon": 5, "samples": 20, "temperature": 0.1 }
//! }
//! ```
//!
//! Every key is optional; unknown keys are rejected at any level. See
//! [`hybridctl::learner::Hyperparameters`] for the hyperparameter keys.

use std::path::{Path, PathBuf};

use hybridctl::env::EnvId;
use hybridctl::learner::{Algorithm, Hyperparameters, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path} not found")]
    Missing { path: PathBuf },
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvId,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Write measured per-episode wall time into the curve files. Off by
    /// default so curves are byte-identical across runs; timings always go
    /// to `run_meta.json`.
    pub record_wall_time: bool,
    /// Save final network parameters per seed.
    pub save_checkpoints: bool,
    pub hyperparameters: Hyperparameters,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvId::Pendulum,
            algorithm: Algorithm::HybridStoch,
            episodes: 30,
            seeds: vec![0],
            out_dir: None,
            record_wall_time: false,
            save_checkpoints: false,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ConfigError::Missing { path: path.to_path_buf() }
            } else {
                ConfigError::Read {
                    path: path.to_path_buf(),
                    source: e,
                }
            }
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            env: self.env,
            algorithm: self.algorithm,
            episodes: self.episodes,
            hyper: self.hyperparameters.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("seeds must not repeat".into()));
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
