use std::collections::BTreeMap;

use super::{RewardBreakdown, RewardConfig, RewardError, StopCase};
use crate::metrics::doc_recall;
use crate::rollout::{recall_trajectory, Rollout};

const TOL: f64 = 1e-12;

/// Optimal rollout length from a per-search recall trajectory.
///
/// Without a reference this is the first position whose recall equals the
/// final recall. With `reference_final = r` it is the first position reaching
/// `r`, or `budget` if none does. Positions are 1-based.
pub fn compute_h_star(trajectory: &[f64], reference_final: Option<f64>, budget: usize) -> Result<usize, RewardError> {
    if trajectory.is_empty() {
        return Err(RewardError::EmptyTrajectory);
    }
    if trajectory.len() > budget {
        return Err(RewardError::TrajectoryTooLong {
            len: trajectory.len(),
            budget,
        });
    }
    if let Some(i) = trajectory.iter().position(|v| !v.is_finite()) {
        return Err(RewardError::OutOfRange(format!("trajectory[{i}] is not finite")));
    }
    if let Some(i) = trajectory.windows(2).position(|w| w[1] < w[0] - TOL) {
        return Err(RewardError::DecreasingTrajectory(i + 1));
    }
    let target = match reference_final {
        Some(r) if !r.is_finite() => return Err(RewardError::OutOfRange(format!("reference recall {r}"))),
        Some(r) => r,
        None => *trajectory.last().unwrap(),
    };
    Ok(trajectory
        .iter()
        .position(|&v| v >= target - TOL)
        .map_or(budget, |i| i + 1))
}

/// `ln((1 - delta) / delta)` for `delta` in `(0, 1)`.
pub fn late_log_ratio(delta: f64) -> f64 {
    ((1.0 - delta) / delta).ln()
}

/// Early-stop penalty before the upper cap: `ln((1 - |d|) / |d|)`, 0 at `d = 0`.
pub fn early_log_ratio(delta: f64) -> f64 {
    let d = delta.abs();
    if d == 0.0 {
        0.0
    } else {
        ((1.0 - d) / d).ln()
    }
}

pub fn stop_reward(h_term: usize, h_star: usize, recall: f64, cfg: &RewardConfig) -> Result<(StopCase, f64), RewardError> {
    cfg.validate()?;
    let b = cfg.budget;
    if !(1..=b).contains(&h_term) || !(1..=b).contains(&h_star) {
        return Err(RewardError::OutOfRange(format!(
            "h_term = {h_term} and h* = {h_star} must lie in [1, {b}]"
        )));
    }
    if !(0.0..=1.0).contains(&recall) {
        return Err(RewardError::OutOfRange(format!("recall {recall} not in [0, 1]")));
    }
    let delta = (h_term as f64 - h_star as f64) / b as f64;
    let answerable = recall >= cfg.tau;
    Ok(if answerable && delta > 0.0 {
        (StopCase::Late, late_log_ratio(delta).clamp(-cfg.r_max, cfg.r_max))
    } else if answerable && delta == 0.0 {
        (StopCase::Perfect, cfg.r_max + cfg.alpha * h_star as f64 / b as f64)
    } else {
        (StopCase::Early, early_log_ratio(delta).clamp(-cfg.r_max, 0.0))
    })
}

/// Mean over hops of +1 for a well-formed step whose retrieval (if any)
/// worked and -1 otherwise. No hops scores 0.
pub fn format_reward(rollout: &Rollout) -> f64 {
    if rollout.hops.is_empty() {
        return 0.0;
    }
    let total: f64 = rollout
        .hops
        .iter()
        .map(|h| {
            if h.proposal.parse_ok && (h.proposal.is_finish() || h.retrieval_ok) {
                1.0
            } else {
                -1.0
            }
        })
        .sum();
    total / rollout.hops.len() as f64
}

pub fn combined_reward(stop: f64, format: f64) -> f64 {
    (stop + format) / 2.0
}

/// Full reward decomposition for one rollout against its gold titles.
pub fn score_rollout_reward<S: AsRef<str>>(
    rollout: &Rollout,
    gold_titles: &[S],
    reference_final: Option<f64>,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    cfg.validate()?;
    let trajectory = recall_trajectory(rollout, gold_titles);
    let h_star = compute_h_star(&trajectory, reference_final, cfg.budget)?;
    let titles = rollout.context_titles();
    let recall = doc_recall(&titles, gold_titles);
    let (case, stop) = stop_reward(rollout.h_term, h_star, recall, cfg)?;
    let format = format_reward(rollout);
    Ok(RewardBreakdown {
        case,
        delta: (rollout.h_term as f64 - h_star as f64) / cfg.budget as f64,
        h_star,
        h_term: rollout.h_term,
        recall,
        stop_reward: stop,
        format_reward: format,
        combined: combined_reward(stop, format),
    })
}

/// Frequency of each h* in `1..=budget`, zero counts included.
pub fn h_star_histogram(values: &[usize], budget: usize) -> BTreeMap<usize, usize> {
    let mut hist: BTreeMap<usize, usize> = (1..=budget).map(|h| (h, 0)).collect();
    for &v in values {
        *hist.entry(v).or_default() += 1;
    }
    hist
}
