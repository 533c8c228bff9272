//! Resolved run configuration: the world, policy initialization, optimizer,
//! optional screening, and reward weights for one reproducible experiment.

use crate::dgs::DgsConfig;
use crate::error::{Error, Result};
use crate::grpo::GrpoHyper;
use crate::reward::RewardConfig;
use crate::world::WorldConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Policy table initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Standard deviation of the i.i.d. zero-mean logit initialization.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { init_scale: 0.1 }
    }
}

/// Everything one run needs; serialized back out beside the run's outputs so
/// every experiment is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training RNG seed (the world has its own generation seed).
    pub seed: u64,
    /// Output directory; relative paths resolve under the output root.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Steps between policy checkpoints; 0 = final checkpoint only.
    #[serde(default)]
    pub checkpoint_interval: usize,
    /// Metric records buffered between flushes.
    #[serde(default = "default_flush_interval")]
    pub metric_flush_interval: usize,
    /// Worker threads for intra-step rollouts and verification experiments.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub world: WorldConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub hyper: GrpoHyper,
    /// Present = screening enabled.
    #[serde(default)]
    pub dgs: Option<DgsConfig>,
    #[serde(default)]
    pub reward: RewardConfig,
}

fn default_flush_interval() -> usize {
    10
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.hyper.validate()?;
        if let Some(dgs) = &self.dgs {
            dgs.validate()?;
        }
        if self.policy.init_scale < 0.0 || !self.policy.init_scale.is_finite() {
            return Err(Error::Config(format!(
                "policy.init_scale ({}) must be finite and >= 0",
                self.policy.init_scale
            )));
        }
        if self.metric_flush_interval == 0 {
            return Err(Error::Config("metric_flush_interval must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}
