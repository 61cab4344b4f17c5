//! The flat JSON service configuration file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoscaler::ScalingPolicy;
use crate::fabric::BootModel;
use crate::time::Duration;
use crate::worker::WorkerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("policy: {0}")]
    Policy(#[from] crate::autoscaler::PolicyError),
    #[error("worker: {0}")]
    Worker(#[from] crate::worker::WorkerConfigError),
}

/// Service configuration. Every field has the documented default, so `{}`
/// is a valid config; unknown keys are rejected to catch typos.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub max_app_instances: usize,
    pub control_period_ms: u64,
    pub idle_timeout_ms: u64,
    pub pending_delay_ms: u64,
    pub boot_mean_ms: u64,
    pub boot_jitter_ms: u64,
    pub poll_interval_ms: u64,
    pub visibility_timeout_ms: u64,
    pub max_batch: usize,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_app_instances: 17,
            control_period_ms: 5000,
            idle_timeout_ms: 60_000,
            pending_delay_ms: 30_000,
            boot_mean_ms: 71_530,
            boot_jitter_ms: 0,
            poll_interval_ms: 60_000,
            visibility_timeout_ms: 120_000,
            max_batch: 50,
            seed: 0,
        }
    }
}

impl ServiceConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let config: ServiceConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy().validate()?;
        self.worker_config().validate()?;
        Ok(())
    }

    pub fn policy(&self) -> ScalingPolicy {
        ScalingPolicy {
            max_app_instances: self.max_app_instances,
            control_period: Duration::from_millis(self.control_period_ms),
            idle_timeout: Duration::from_millis(self.idle_timeout_ms),
            boot_model: BootModel {
                pending_delay: Duration::from_millis(self.pending_delay_ms),
                boot_mean: Duration::from_millis(self.boot_mean_ms),
                boot_jitter: Duration::from_millis(self.boot_jitter_ms),
                seed: self.seed,
            },
        }
    }

    pub fn worker_config(&self) -> WorkerConfig {
        WorkerConfig {
            poll_interval: Duration::from_millis(self.poll_interval_ms),
            receive_batch: 1,
            visibility_timeout: Duration::from_millis(self.visibility_timeout_ms),
        }
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }
}
