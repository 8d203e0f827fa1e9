//! Stopping rewards, format rewards, group-relative advantages and a toy
//! stopping-policy trainer.

mod grpo;
mod stop;
mod trainer;

pub use grpo::{group_advantages, sample_group, GrpoGroup, DEFAULT_EPSILON, DEFAULT_GROUP_SIZE};
pub use stop::{
    combined_reward, compute_h_star, early_log_ratio, format_reward, h_star_histogram, late_log_ratio,
    score_rollout_reward, stop_reward,
};
pub use trainer::{
    evaluate_stopping_policy, finish_probability, train_stopping_policy, CurvePoint, EpisodeStats, StoppingPolicyParams,
    SyntheticEnv, TrainOutcome,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("recall trajectory is empty")]
    EmptyTrajectory,
    #[error("recall trajectory decreases at position {0}")]
    DecreasingTrajectory(usize),
    #[error("recall trajectory has {len} entries but the budget is {budget}")]
    TrajectoryTooLong { len: usize, budget: usize },
    #[error("input out of range: {0}")]
    OutOfRange(String),
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("weights diverged at step {0}")]
    Diverged(usize),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("rollout failed: {0}")]
    Rollout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub r_max: f64,
    pub alpha: f64,
    pub tau: f64,
    pub budget: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_max: 2.0,
            alpha: 1.0,
            tau: 1.0,
            budget: 6,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(RewardError::InvalidConfig(format!("r_max must be > 0, got {}", self.r_max)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(RewardError::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(RewardError::InvalidConfig(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if self.budget < 1 {
            return Err(RewardError::InvalidConfig(format!("budget B must be >= 1, got {}", self.budget)));
        }
        Ok(())
    }

    /// The loose band every combined reward must fall in.
    pub fn band(&self) -> (f64, f64) {
        (-self.r_max - 1.0, self.r_max + self.alpha + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StopCase {
    Late,
    Perfect,
    Early,
}

impl StopCase {
    pub fn as_str(self) -> &'static str {
        match self {
            StopCase::Late => "LATE",
            StopCase::Perfect => "PERFECT",
            StopCase::Early => "EARLY",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub case: StopCase,
    pub delta: f64,
    pub h_star: usize,
    pub h_term: usize,
    pub recall: f64,
    pub stop_reward: f64,
    pub format_reward: f64,
    pub combined: f64,
}
