//! Few-shot prompt bootstrapping by random search over harvested traces.
//!
//! The pipeline is run zero-shot on the seed examples; traces whose answer
//! exactly matches a gold answer are kept as demonstrations. Each candidate
//! is a seeded random subset of those demos. Candidates are scored by the
//! mean of (answer EM + answer passage match) over the seed examples and the
//! best `keep` are returned, ties going to the lower candidate index.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{render_trace, PolicyError, PolicySpec, PromptSet};
use crate::metrics::exact_match;
use crate::qa::{normalize_answer, Dataset};
use crate::retrieval::Retriever;
use crate::rollout::{generate_answer, run_rollout_in_slot, Rollout, RolloutConfig, RunSlot};
use crate::util::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub candidate_count: usize,
    pub keep: usize,
    pub demos_per_set: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            candidate_count: 15,
            keep: 4,
            demos_per_set: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub selected: Vec<PromptSet>,
    pub scores: Vec<CandidateScore>,
    pub harvested: usize,
}

/// 1 if the normalized gold answer occurs in any context passage.
pub fn answer_passage_match(rollout: &Rollout, golds: &[String]) -> f64 {
    let passages: Vec<String> = rollout.context_documents().map(|d| normalize_answer(&d.text)).collect();
    let hit = golds.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && passages.iter().any(|p| p.contains(&g))
    });
    if hit { 1.0 } else { 0.0 }
}

fn run_scored(
    policy: &PolicySpec,
    seeds: &Dataset,
    retriever: &dyn Retriever,
    config: RolloutConfig,
    prompt_set: &PromptSet,
    prompt_index: usize,
) -> Result<Vec<(Rollout, f64, f64)>, PolicyError> {
    seeds
        .examples
        .par_iter()
        .map(|ex| {
            let slot = RunSlot {
                prompt_set,
                prompt_index,
                sample_index: 0,
                allow_finish: policy.allow_finish,
            };
            let rollout = run_rollout_in_slot(ex, policy, retriever, config, slot)
                .map_err(|e| PolicyError::InvalidSpec(e.to_string()))?;
            let answer = generate_answer(&rollout, policy)?;
            let em = exact_match(&answer, &ex.gold_answers);
            let pm = answer_passage_match(&rollout, &ex.gold_answers);
            Ok((rollout, em, pm))
        })
        .collect()
}

pub fn bootstrap_prompts(
    policy: &PolicySpec,
    seed_examples: &Dataset,
    retriever: &dyn Retriever,
    rollout_config: RolloutConfig,
    config: BootstrapConfig,
) -> Result<BootstrapOutcome, PolicyError> {
    if seed_examples.is_empty() || config.keep > config.candidate_count || config.keep == 0 {
        return Err(PolicyError::InvalidBootstrap {
            keep: config.keep,
            candidates: config.candidate_count,
            seeds: seed_examples.len(),
        });
    }

    let base = &policy.prompt_set;
    let harvested: Vec<String> = run_scored(policy, seed_examples, retriever, rollout_config, base, 0)?
        .into_iter()
        .filter(|(_, em, _)| *em == 1.0)
        .map(|(r, _, _)| render_trace(&r.question, &r.initial_docs, &r.hops))
        .collect();
    if harvested.is_empty() {
        return Err(PolicyError::NoSuccessfulTraces(seed_examples.len()));
    }

    let per_set = config.demos_per_set.clamp(1, harvested.len());
    let candidates: Vec<PromptSet> = (0..config.candidate_count)
        .map(|c| {
            let mut rng = derived_rng(config.seed, "bootstrap", &[c as u64]);
            let mut demos = harvested.clone();
            demos.shuffle(&mut rng);
            demos.truncate(per_set);
            PromptSet {
                id: format!("{}-bootstrap-{c:02}", base.id),
                instruction: base.instruction.clone(),
                demos,
            }
        })
        .collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for (index, cand) in candidates.iter().enumerate() {
        let runs = run_scored(policy, seed_examples, retriever, rollout_config, cand, index)?;
        let score = runs.iter().map(|(_, em, pm)| em + pm).sum::<f64>() / runs.len() as f64;
        scores.push(CandidateScore {
            index,
            id: cand.id.clone(),
            score,
        });
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].score.total_cmp(&scores[a].score).then(a.cmp(&b))
    });
    let selected = order
        .into_iter()
        .take(config.keep)
        .map(|i| candidates[i].clone())
        .collect();
    Ok(BootstrapOutcome {
        selected,
        scores,
        harvested: harvested.len(),
    })
}
