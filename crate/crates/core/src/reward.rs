//! Per-second reward from one simulator tick.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TickOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Utility per vehicle crossing the stop line.
    pub discharge_reward: f64,
    /// Disutility per vehicle per second queued behind a red display.
    pub red_wait_penalty: f64,
    /// Disutility per vehicle left in queue when its green ends.
    pub residual_penalty: f64,
    /// Speed below which a vehicle counts as queued. Every vehicle in the
    /// point queue is stopped, so this is informational only.
    pub queue_speed_threshold_kph: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            discharge_reward: 20.0,
            red_wait_penalty: 1.0,
            residual_penalty: 5.0,
            queue_speed_threshold_kph: 15.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.discharge_reward, self.red_wait_penalty, self.residual_penalty, self.queue_speed_threshold_kph];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("reward magnitudes must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn compute_reward(outcome: &TickOutcome, cfg: &RewardConfig) -> f64 {
    let residual: u32 = outcome.green_terminated.iter().map(|(_, q)| q).sum();
    cfg.discharge_reward * outcome.total_discharged() as f64
        - cfg.red_wait_penalty * outcome.queued_on_red() as f64
        - cfg.residual_penalty * residual as f64
}
