//! A desk-scale stopping policy trained with the stopping reward.
//!
//! Each synthetic task has a known h*: every search up to h* finds one new
//! gold document, later searches find nothing. After each search the policy
//! sees `[bias, h/B, new-doc fraction of the last hop, overlap of the next
//! query with the context]` and finishes with probability `sigmoid(w . x)`.
//! Both signal features are noisy indicators of whether h* was reached.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{combined_reward, group_advantages, stop_reward, RewardConfig, RewardError, DEFAULT_EPSILON};
use crate::util::derived_rng;

pub const FEATURES: usize = 4;

fn default_budget() -> usize {
    6
}

fn default_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Support of the task distribution; tasks are drawn uniformly from it.
    pub h_star: Vec<usize>,
    #[serde(default = "default_noise")]
    pub signal_noise: f64,
    #[serde(default)]
    pub format_error_prob: f64,
}

impl SyntheticEnv {
    pub fn uniform(budget: usize) -> Self {
        Self {
            budget,
            h_star: (1..=budget).collect(),
            signal_noise: default_noise(),
            format_error_prob: 0.0,
        }
    }

    pub fn constant(budget: usize, h_star: usize) -> Self {
        Self {
            h_star: vec![h_star],
            ..Self::uniform(budget)
        }
    }

    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RewardError::InvalidEnv(format!("{}: {e}", path.display())))?;
        let env: Self = serde_json::from_str(&text).map_err(|e| RewardError::InvalidEnv(e.to_string()))?;
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.budget < 1 {
            return Err(RewardError::InvalidEnv("budget must be >= 1".into()));
        }
        if self.h_star.is_empty() {
            return Err(RewardError::InvalidEnv("h_star support is empty".into()));
        }
        if let Some(h) = self.h_star.iter().find(|&&h| h < 1 || h > self.budget) {
            return Err(RewardError::InvalidEnv(format!("h* = {h} outside [1, {}]", self.budget)));
        }
        if !(0.0..=0.5).contains(&self.signal_noise) {
            return Err(RewardError::InvalidEnv(format!("signal_noise {} not in [0, 0.5]", self.signal_noise)));
        }
        if !(0.0..=1.0).contains(&self.format_error_prob) {
            return Err(RewardError::InvalidEnv(format!(
                "format_error_prob {} not in [0, 1]",
                self.format_error_prob
            )));
        }
        Ok(())
    }

    fn features(&self, h: usize, h_star: usize, rng: &mut ChaCha8Rng) -> [f64; FEATURES] {
        let mut jitter = |base: f64| (base + self.signal_noise * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0);
        let new_docs = jitter(if h <= h_star { 0.75 } else { 0.15 });
        let overlap = jitter(if h >= h_star { 0.8 } else { 0.2 });
        [1.0, h as f64 / self.budget as f64, new_docs, overlap]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingPolicyParams {
    pub weights: [f64; FEATURES],
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for StoppingPolicyParams {
    fn default() -> Self {
        Self {
            weights: [0.0; FEATURES],
            learning_rate: 0.2,
            seed: 7,
        }
    }
}

pub fn finish_probability(weights: &[f64; FEATURES], x: &[f64; FEATURES]) -> f64 {
    let z: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum();
    1.0 / (1.0 + (-z).exp())
}

struct Episode {
    h_star: usize,
    h_term: usize,
    recall: f64,
    combined: f64,
    /// Per-decision gradient of the log-probability of the taken action.
    grad: [f64; FEATURES],
}

fn run_episode(
    env: &SyntheticEnv,
    weights: &[f64; FEATURES],
    h_star: usize,
    cfg: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Episode, RewardError> {
    let mut grad = [0.0; FEATURES];
    let mut h = 1;
    let mut hops = 0usize;
    let mut well_formed = 0usize;
    loop {
        if h >= env.budget {
            break;
        }
        let x = env.features(h, h_star, rng);
        let p = finish_probability(weights, &x);
        let finish = rng.random::<f64>() < p;
        let y = if finish { 1.0 } else { 0.0 };
        for (g, v) in grad.iter_mut().zip(x) {
            *g += (y - p) * v;
        }
        hops += 1;
        if rng.random::<f64>() >= env.format_error_prob {
            well_formed += 1;
        }
        if finish {
            break;
        }
        h += 1;
    }
    let recall = h.min(h_star) as f64 / h_star as f64;
    let (_, stop) = stop_reward(h, h_star, recall, cfg)?;
    let format = if hops == 0 {
        0.0
    } else {
        (2.0 * well_formed as f64 - hops as f64) / hops as f64
    };
    Ok(Episode {
        h_star,
        h_term: h,
        recall,
        combined: combined_reward(stop, format),
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_abs_error: f64,
    pub mean_searches: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: StoppingPolicyParams,
    pub curve: Vec<CurvePoint>,
}

fn check_budget(env: &SyntheticEnv, cfg: &RewardConfig) -> Result<(), RewardError> {
    env.validate()?;
    cfg.validate()?;
    if env.budget != cfg.budget {
        return Err(RewardError::InvalidEnv(format!(
            "environment budget {} differs from reward budget {}",
            env.budget, cfg.budget
        )));
    }
    Ok(())
}

/// REINFORCE with group-normalized combined rewards: each step draws one
/// task, samples `v` episodes and moves the weights along the
/// advantage-weighted score function.
pub fn train_stopping_policy(
    env: &SyntheticEnv,
    params: StoppingPolicyParams,
    cfg: &RewardConfig,
    v: usize,
    steps: usize,
) -> Result<TrainOutcome, RewardError> {
    check_budget(env, cfg)?;
    if v < 2 {
        return Err(RewardError::GroupTooSmall(v));
    }
    let mut weights = params.weights;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(RewardError::Diverged(0));
    }
    let mut rng = derived_rng(params.seed, "train-stop", &[]);
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let h_star = env.h_star[rng.random_range(0..env.h_star.len())];
        let episodes = (0..v)
            .map(|_| run_episode(env, &weights, h_star, cfg, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let rewards: Vec<f64> = episodes.iter().map(|e| e.combined).collect();
        let adv = group_advantages(&rewards, DEFAULT_EPSILON)?;
        let mut update = [0.0; FEATURES];
        for (e, a) in episodes.iter().zip(&adv) {
            for (u, g) in update.iter_mut().zip(e.grad) {
                *u += a * g / v as f64;
            }
        }
        for (w, u) in weights.iter_mut().zip(update) {
            *w += params.learning_rate * u;
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(RewardError::Diverged(step));
        }
        let n = v as f64;
        curve.push(CurvePoint {
            step,
            mean_abs_error: episodes.iter().map(|e| e.h_term.abs_diff(e.h_star) as f64).sum::<f64>() / n,
            mean_searches: episodes.iter().map(|e| e.h_term as f64).sum::<f64>() / n,
            mean_reward: rewards.iter().sum::<f64>() / n,
        });
    }
    Ok(TrainOutcome {
        params: StoppingPolicyParams { weights, ..params },
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episodes: usize,
    pub mean_abs_error: f64,
    pub mean_searches: f64,
    pub mean_recall: f64,
    pub answerable_rate: f64,
    pub mean_reward: f64,
}

/// Sampled evaluation cycling through the task support.
pub fn evaluate_stopping_policy(
    env: &SyntheticEnv,
    weights: &[f64; FEATURES],
    cfg: &RewardConfig,
    episodes: usize,
    seed: u64,
) -> Result<EpisodeStats, RewardError> {
    check_budget(env, cfg)?;
    if episodes == 0 {
        return Err(RewardError::OutOfRange("episodes must be >= 1".into()));
    }
    let mut rng = derived_rng(seed, "eval-stop", &[]);
    let mut acc = [0.0; 5];
    for i in 0..episodes {
        let h_star = env.h_star[i % env.h_star.len()];
        let e = run_episode(env, weights, h_star, cfg, &mut rng)?;
        acc[0] += e.h_term.abs_diff(e.h_star) as f64;
        acc[1] += e.h_term as f64;
        acc[2] += e.recall;
        acc[3] += if e.recall >= cfg.tau { 1.0 } else { 0.0 };
        acc[4] += e.combined;
    }
    let n = episodes as f64;
    Ok(EpisodeStats {
        episodes,
        mean_abs_error: acc[0] / n,
        mean_searches: acc[1] / n,
        mean_recall: acc[2] / n,
        answerable_rate: acc[3] / n,
        mean_reward: acc[4] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn untrained_policy_flips_fair_coins() {
        let x = [1.0, 0.5, 0.2, 0.9];
        assert_eq!(finish_probability(&[0.0; FEATURES], &x), 0.5);
    }

    #[test]
    fn degenerate_h_star_one_learns_to_finish() {
        let env = SyntheticEnv::constant(6, 1);
        let out = train_stopping_policy(&env, StoppingPolicyParams::default(), &cfg(), 8, 600).unwrap();
        let mut rng = derived_rng(1, "probe", &[]);
        let mean_p: f64 = (0..200)
            .map(|_| finish_probability(&out.params.weights, &env.features(1, 1, &mut rng)))
            .sum::<f64>()
            / 200.0;
        assert!(mean_p > 0.9, "finish probability {mean_p}");
    }

    #[test]
    fn degenerate_h_star_budget_learns_to_exhaust() {
        let env = SyntheticEnv::constant(6, 6);
        let out = train_stopping_policy(&env, StoppingPolicyParams::default(), &cfg(), 8, 600).unwrap();
        let stats = evaluate_stopping_policy(&env, &out.params.weights, &cfg(), 500, 3).unwrap();
        assert!(stats.mean_searches > 5.8, "{stats:?}");
    }

    #[test]
    fn training_is_seeded() {
        let env = SyntheticEnv::uniform(6);
        let a = train_stopping_policy(&env, StoppingPolicyParams::default(), &cfg(), 8, 50).unwrap();
        let b = train_stopping_policy(&env, StoppingPolicyParams::default(), &cfg(), 8, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_and_bad_env_are_errors() {
        let env = SyntheticEnv::uniform(6);
        let params = StoppingPolicyParams { learning_rate: f64::INFINITY, ..StoppingPolicyParams::default() };
        assert!(matches!(train_stopping_policy(&env, params, &cfg(), 8, 10), Err(RewardError::Diverged(_))));
        let bad = SyntheticEnv { h_star: vec![7], ..env.clone() };
        assert!(bad.validate().is_err());
        assert!(train_stopping_policy(&env, StoppingPolicyParams::default(), &cfg(), 1, 10).is_err());
        let other = RewardConfig { budget: 5, ..cfg() };
        assert!(train_stopping_policy(&env, StoppingPolicyParams::default(), &other, 8, 10).is_err());
    }
}
