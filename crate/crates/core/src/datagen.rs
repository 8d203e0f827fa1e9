//! Exploration training data: greedy best-of-n rollouts and SFT export.
//!
//! At every hop each prompt set proposes one step from the shared context.
//! Candidates are scored by the recall they would add and the best one is
//! appended; there is no backtracking. Each question is generated twice, with
//! and without FINISH, and one of the two runs (chosen per question with
//! probability `mixture` for the no-FINISH run) supplies its SFT records.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::doc_recall;
use crate::policy::{render_react_prompt, render_step, PolicySpec, PromptSet};
use crate::qa::{normalize_title, Dataset, QaExample};
use crate::retrieval::Retriever;
use crate::rollout::{HopRecord, Rollout, RolloutConfig, RolloutError, RolloutState, RunSlot};
use crate::util::{derived_rng, write_jsonl};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("mixture must be in [0, 1], got {0}")]
    InvalidMixture(f64),
    #[error("at least one prompt set is required")]
    NoPrompts,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("sft io: {0}")]
    Io(#[from] std::io::Error),
    #[error("sft file line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SftSource {
    WithFinish,
    NoFinish,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub prompt_index: usize,
    pub prompt_id: String,
    pub hop: HopRecord,
    pub recall_gain: f64,
}

/// Candidates for one hop, all proposed from the same context.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub hop_index: usize,
    pub context_titles: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    fn recall_with(&self, candidate: &Candidate, gold: &[String]) -> f64 {
        let titles: Vec<&str> = self
            .context_titles
            .iter()
            .map(String::as_str)
            .chain(candidate.hop.retrieved.documents().map(|d| d.title.as_str()))
            .collect();
        doc_recall(&titles, gold)
    }
}

/// The candidate whose documents maximize context recall; ties go to the
/// lowest prompt index. `None` only for an empty set.
pub fn select_best_candidate<'a>(set: &'a CandidateSet, gold_titles: &[String]) -> Option<&'a Candidate> {
    let mut best: Option<(&Candidate, f64)> = None;
    for cand in &set.candidates {
        let recall = set.recall_with(cand, gold_titles);
        let better = match best {
            None => true,
            Some((b, r)) => recall > r || (recall == r && cand.prompt_index < b.prompt_index),
        };
        if better {
            best = Some((cand, recall));
        }
    }
    best.map(|(c, _)| c)
}

fn context_titles(state: &RolloutState<'_>) -> Vec<String> {
    state
        .initial
        .documents()
        .chain(state.hops.iter().flat_map(|h| h.retrieved.documents()))
        .map(|d| d.title.clone())
        .collect()
}

/// Greedy best-of-n rollout over `prompts`. Returns the rollout and the
/// candidate set considered at each hop.
pub fn best_of_n_rollout(
    example: &QaExample,
    prompts: &[PromptSet],
    policy: &PolicySpec,
    retriever: &dyn Retriever,
    config: RolloutConfig,
    allow_finish: bool,
) -> Result<(Rollout, Vec<CandidateSet>), RolloutError> {
    config.validate()?;
    let mut state = RolloutState::start(example, retriever, config);
    let mut sets = Vec::new();
    while state.can_continue() {
        let ctx_titles = context_titles(&state);
        let base = doc_recall(&ctx_titles, &example.gold_titles);
        let candidates = prompts
            .iter()
            .enumerate()
            .map(|(i, ps)| {
                let slot = RunSlot {
                    prompt_set: ps,
                    prompt_index: i,
                    sample_index: 0,
                    allow_finish,
                };
                let hop = state.execute(state.propose(policy, slot), retriever);
                let titles: Vec<&str> = ctx_titles
                    .iter()
                    .map(String::as_str)
                    .chain(hop.retrieved.documents().map(|d| d.title.as_str()))
                    .collect();
                Candidate {
                    prompt_index: i,
                    prompt_id: ps.id.clone(),
                    recall_gain: doc_recall(&titles, &example.gold_titles) - base,
                    hop,
                }
            })
            .collect();
        let set = CandidateSet {
            hop_index: state.next_hop_index(),
            context_titles: ctx_titles,
            candidates,
        };
        let chosen = select_best_candidate(&set, &example.gold_titles)
            .expect("prompts are non-empty")
            .hop
            .clone();
        state.push(chosen);
        sets.push(set);
    }
    Ok((state.finish(), sets))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub example_id: String,
    #[serde(rename = "hop")]
    pub hop_index: usize,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    pub source: SftSource,
}

/// One SFT record per usable hop: well-formed output whose retrieval (if
/// any) succeeded. Inputs are rendered with `prompt_set`.
pub fn sft_records(rollout: &Rollout, prompt_set: &PromptSet, source: SftSource) -> Vec<SftRecord> {
    rollout
        .hops
        .iter()
        .enumerate()
        .filter(|(_, h)| h.proposal.parse_ok && (h.proposal.is_finish() || h.retrieval_ok))
        .map(|(j, h)| SftRecord {
            example_id: rollout.example_id.clone(),
            hop_index: h.hop_index,
            input_text: render_react_prompt(&rollout.question, &rollout.initial_docs, &rollout.hops[..j], prompt_set),
            target_text: render_step(&h.proposal),
            source,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct QuestionOutcome {
    pub example_id: String,
    pub no_finish: Rollout,
    pub with_finish: Rollout,
    pub source: SftSource,
    pub records: Vec<SftRecord>,
}

impl QuestionOutcome {
    pub fn chosen(&self) -> &Rollout {
        match self.source {
            SftSource::NoFinish => &self.no_finish,
            SftSource::WithFinish => &self.with_finish,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatagenOutput {
    pub questions: Vec<QuestionOutcome>,
    pub records: Vec<SftRecord>,
    pub skipped: Vec<String>,
}

impl DatagenOutput {
    pub fn source_count(&self, source: SftSource) -> usize {
        self.questions.iter().filter(|q| q.source == source).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub rollout: RolloutConfig,
    pub mixture: f64,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            rollout: RolloutConfig::default(),
            mixture: 0.9,
            seed: 17,
        }
    }
}

/// Draws which run sources a question's records. Depends only on the seed
/// and the example id.
pub fn draw_source(seed: u64, example_id: &str, mixture: f64) -> SftSource {
    let mut rng = derived_rng(seed, example_id, &[0x6d78]);
    if rng.random::<f64>() < mixture {
        SftSource::NoFinish
    } else {
        SftSource::WithFinish
    }
}

pub fn generate_dataset(
    train: &Dataset,
    prompts: &[PromptSet],
    policy: &PolicySpec,
    retriever: &dyn Retriever,
    config: DatagenConfig,
) -> Result<DatagenOutput, DatagenError> {
    if !(0.0..=1.0).contains(&config.mixture) {
        return Err(DatagenError::InvalidMixture(config.mixture));
    }
    if prompts.is_empty() {
        return Err(DatagenError::NoPrompts);
    }
    if train.is_empty() {
        return Err(DatagenError::EmptyTrainingSet);
    }
    config.rollout.validate()?;

    let questions: Vec<QuestionOutcome> = train
        .examples
        .par_iter()
        .map(|ex| {
            let (no_finish, _) = best_of_n_rollout(ex, prompts, policy, retriever, config.rollout, false)?;
            let (with_finish, _) = best_of_n_rollout(ex, prompts, policy, retriever, config.rollout, true)?;
            let source = draw_source(config.seed, &ex.id, config.mixture);
            let chosen = match source {
                SftSource::NoFinish => &no_finish,
                SftSource::WithFinish => &with_finish,
            };
            let records = sft_records(chosen, &policy.prompt_set, source);
            Ok(QuestionOutcome {
                example_id: ex.id.clone(),
                no_finish,
                with_finish,
                source,
                records,
            })
        })
        .collect::<Result<_, RolloutError>>()?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for q in &questions {
        if q.records.is_empty() {
            tracing::warn!(example = q.example_id, "no usable hops; question skipped");
            skipped.push(q.example_id.clone());
        }
        records.extend(q.records.iter().cloned());
    }
    Ok(DatagenOutput {
        questions,
        records,
        skipped,
    })
}

pub fn export_sft_jsonl(records: &[SftRecord], path: &Path) -> Result<usize, DatagenError> {
    Ok(write_jsonl(path, records)?)
}

pub fn read_sft_jsonl(path: &Path) -> Result<Vec<SftRecord>, DatagenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatagenError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// Normalized gold titles found in a rollout's context.
pub fn covered_gold(rollout: &Rollout, gold: &[String]) -> HashSet<String> {
    let gold: HashSet<String> = gold.iter().map(|t| normalize_title(t)).collect();
    rollout
        .context_documents()
        .map(|d| normalize_title(&d.title))
        .filter(|t| gold.contains(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{parse_step, Action, Backend, ScriptedBackend, ScriptedStep, ScriptedTrace, StepProposal};
    use crate::qa::Document;
    use crate::retrieval::{Bm25Params, Hit, RetrievedSet, RetrieverIndex};
    use std::collections::HashMap;

    fn hop_with(titles: &[&str]) -> HopRecord {
        HopRecord {
            hop_index: 1,
            proposal: StepProposal::search("t", "q"),
            retrieved: RetrievedSet {
                query: "q".into(),
                hits: titles
                    .iter()
                    .map(|t| Hit {
                        document: Document { doc_id: t.to_lowercase(), title: t.to_string(), text: String::new() },
                        score: 1.0,
                    })
                    .collect(),
                k: 3,
            },
            retrieval_ok: true,
        }
    }

    fn cand(i: usize, titles: &[&str], gain: f64) -> Candidate {
        Candidate { prompt_index: i, prompt_id: format!("p{}", i + 1), hop: hop_with(titles), recall_gain: gain }
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let gold = vec!["A".to_string(), "B".to_string()];
        let set = CandidateSet {
            hop_index: 1,
            context_titles: vec![],
            candidates: vec![cand(0, &["X"], 0.0), cand(1, &["A"], 0.5), cand(2, &["B"], 0.5)],
        };
        assert_eq!(select_best_candidate(&set, &gold).unwrap().prompt_id, "p2");
    }

    #[test]
    fn single_candidate_is_chosen() {
        let gold = vec!["A".to_string()];
        let set = CandidateSet { hop_index: 1, context_titles: vec![], candidates: vec![cand(0, &["X"], 0.0)] };
        assert_eq!(select_best_candidate(&set, &gold).unwrap().prompt_index, 0);
        let empty = CandidateSet { hop_index: 1, context_titles: vec![], candidates: vec![] };
        assert!(select_best_candidate(&empty, &gold).is_none());
    }

    #[test]
    fn context_titles_count_toward_selection() {
        let gold = vec!["A".to_string(), "B".to_string()];
        let set = CandidateSet {
            hop_index: 2,
            context_titles: vec!["A".into()],
            candidates: vec![cand(0, &["a"], 0.0), cand(1, &["B"], 0.5)],
        };
        assert_eq!(select_best_candidate(&set, &gold).unwrap().prompt_index, 1);
    }

    fn toy() -> (RetrieverIndex, QaExample, PolicySpec, Vec<PromptSet>) {
        let docs: Vec<Document> = ["alpha", "beta", "gamma", "delta", "omega"]
            .iter()
            .map(|w| Document { doc_id: w.to_string(), title: w.to_uppercase(), text: format!("{w} facts") })
            .collect();
        let index = RetrieverIndex::build(docs, Bm25Params::default()).unwrap();
        let ex = QaExample {
            id: "q".into(),
            question: "omega?".into(),
            gold_answers: vec!["x".into()],
            gold_titles: vec!["ALPHA".into(), "BETA".into(), "GAMMA".into()],
            gold_evidence: vec![],
            hop_count: None,
        };
        let mut per_prompt = HashMap::new();
        per_prompt.insert("p1".to_string(), vec![ScriptedStep::finish("early"), ScriptedStep::search("x", "delta")]);
        per_prompt.insert("p2".to_string(), vec![ScriptedStep::search("a", "alpha"), ScriptedStep::search("a", "alpha")]);
        per_prompt.insert("p3".to_string(), vec![ScriptedStep::search("b", "beta"), ScriptedStep::search("g", "gamma")]);
        let mut traces = HashMap::new();
        traces.insert("q".to_string(), ScriptedTrace { steps: vec![], per_prompt });
        let policy = PolicySpec::new(Backend::Scripted(ScriptedBackend { traces, answers: HashMap::new() }));
        let prompts = ["p1", "p2", "p3"]
            .iter()
            .map(|id| PromptSet { id: id.to_string(), ..PromptSet::default() })
            .collect();
        (index, ex, policy, prompts)
    }

    #[test]
    fn greedy_selection_dominates_each_hop() {
        let (index, ex, policy, prompts) = toy();
        let (rollout, sets) = best_of_n_rollout(&ex, &prompts, &policy, &index, RolloutConfig::default(), false).unwrap();
        for (set, hop) in sets.iter().zip(&rollout.hops) {
            let chosen = set.candidates.iter().find(|c| c.hop == *hop).unwrap();
            assert!(set.candidates.iter().all(|c| chosen.recall_gain >= c.recall_gain));
            assert!(set.candidates.iter().all(|c| c.recall_gain >= 0.0));
        }
        // hop 1: alpha and beta tie at 1/3, p2 wins; hop 2: gamma from p3.
        assert_eq!(rollout.hops[0].proposal.search_query.as_deref(), Some("alpha"));
        assert_eq!(rollout.hops[1].proposal.search_query.as_deref(), Some("gamma"));
        let ids: Vec<&str> = rollout.context_documents().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids.len(), ids.iter().collect::<HashSet<_>>().len());
    }

    #[test]
    fn with_finish_stops_when_finish_wins_tie() {
        let (index, ex, policy, prompts) = toy();
        // With FINISH allowed, hop 3 has no gain anywhere; p1 (index 0) finishes.
        let (rollout, _) = best_of_n_rollout(&ex, &prompts, &policy, &index, RolloutConfig::default(), true).unwrap();
        assert_eq!(rollout.hops.last().unwrap().proposal.action, Action::Finish);
        assert!(rollout.h_term < 6);
    }

    #[test]
    fn mixture_one_sources_only_no_finish() {
        let (index, ex, policy, prompts) = toy();
        let train = Dataset::new("train", vec![ex]).unwrap();
        let cfg = DatagenConfig { mixture: 1.0, ..DatagenConfig::default() };
        let out = generate_dataset(&train, &prompts, &policy, &index, cfg).unwrap();
        assert_eq!(out.source_count(SftSource::NoFinish), 1);
        assert!(!out.records.is_empty());
        for r in &out.records {
            let p = parse_step(&r.target_text);
            assert!(p.parse_ok);
            assert_eq!(p.action, Action::Search);
            assert_eq!(r.source, SftSource::NoFinish);
        }
        let cfg = DatagenConfig { mixture: 0.0, ..DatagenConfig::default() };
        let out = generate_dataset(&train, &prompts, &policy, &index, cfg).unwrap();
        assert_eq!(out.source_count(SftSource::WithFinish), 1);
    }

    #[test]
    fn sft_inputs_are_prompt_prefixes() {
        let (index, ex, policy, prompts) = toy();
        let (rollout, _) = best_of_n_rollout(&ex, &prompts, &policy, &index, RolloutConfig::default(), false).unwrap();
        let recs = sft_records(&rollout, &policy.prompt_set, SftSource::NoFinish);
        assert_eq!(recs.len(), rollout.hops.len());
        for (j, r) in recs.iter().enumerate() {
            assert_eq!(
                r.input_text,
                render_react_prompt(&rollout.question, &rollout.initial_docs, &rollout.hops[..j], &policy.prompt_set)
            );
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let (index, ex, policy, prompts) = toy();
        let train = Dataset::new("train", vec![ex]).unwrap();
        let cfg = DatagenConfig { mixture: 1.5, ..DatagenConfig::default() };
        assert!(matches!(generate_dataset(&train, &prompts, &policy, &index, cfg), Err(DatagenError::InvalidMixture(_))));
        assert!(matches!(generate_dataset(&train, &[], &policy, &index, DatagenConfig::default()), Err(DatagenError::NoPrompts)));
        let empty = Dataset::new("e", vec![]).unwrap();
        assert!(matches!(generate_dataset(&empty, &prompts, &policy, &index, DatagenConfig::default()), Err(DatagenError::EmptyTrainingSet)));
    }

    #[test]
    fn export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        assert_eq!(export_sft_jsonl(&[], &path).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        let recs: Vec<SftRecord> = (0..3)
            .map(|i| SftRecord {
                example_id: format!("q{i}"),
                hop_index: i + 1,
                input_text: format!("Question: {i}\n\"quoted\"\nThought:"),
                target_text: "Thought: t\nAction: Finish[]".into(),
                source: if i == 0 { SftSource::WithFinish } else { SftSource::NoFinish },
            })
            .collect();
        assert_eq!(export_sft_jsonl(&recs, &path).unwrap(), 3);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        assert_eq!(read_sft_jsonl(&path).unwrap(), recs);
        let line = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["example_id", "hop", "input", "target", "source"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["source"], "WITH_FINISH");
    }
}
