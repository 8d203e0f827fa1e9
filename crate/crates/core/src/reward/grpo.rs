use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score_rollout_reward, RewardBreakdown, RewardConfig, RewardError};
use crate::policy::PolicySpec;
use crate::qa::QaExample;
use crate::retrieval::Retriever;
use crate::rollout::{run_rollout_in_slot, Rollout, RolloutConfig, RunSlot};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_GROUP_SIZE: usize = 8;

/// `(r_i - mean) / (population std + epsilon)`; all zeros when every reward
/// is identical.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::OutOfRange("non-finite reward".into()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub group_size: usize,
    pub samples: Vec<(Rollout, RewardBreakdown)>,
    pub advantages: Vec<f64>,
}

/// Samples `v` rollouts for one question (sample indices `0..v`), scores
/// each with the combined reward and normalizes within the group.
pub fn sample_group(
    example: &QaExample,
    policy: &PolicySpec,
    retriever: &dyn Retriever,
    rollout_config: RolloutConfig,
    reward_config: &RewardConfig,
    v: usize,
    reference_final: Option<f64>,
) -> Result<GrpoGroup, RewardError> {
    if v < 2 {
        return Err(RewardError::GroupTooSmall(v));
    }
    let samples = (0..v)
        .into_par_iter()
        .map(|i| {
            let slot = RunSlot {
                prompt_set: &policy.prompt_set,
                prompt_index: 0,
                sample_index: i,
                allow_finish: policy.allow_finish,
            };
            let rollout = run_rollout_in_slot(example, policy, retriever, rollout_config, slot)
                .map_err(|e| RewardError::Rollout(e.to_string()))?;
            let breakdown = score_rollout_reward(&rollout, &example.gold_titles, reference_final, reward_config)?;
            Ok((rollout, breakdown))
        })
        .collect::<Result<Vec<_>, RewardError>>()?;
    let rewards: Vec<f64> = samples.iter().map(|(_, b)| b.combined).collect();
    let advantages = group_advantages(&rewards, DEFAULT_EPSILON)?;
    Ok(GrpoGroup {
        group_size: v,
        samples,
        advantages,
    })
}
