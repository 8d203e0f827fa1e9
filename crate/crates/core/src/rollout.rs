//! The budgeted retrieve-and-reason loop.
//!
//! A rollout optionally starts with `D_0 = R(Q)`, then asks the policy for a
//! step at each hop. SEARCH steps retrieve `k` documents and keep only those
//! not already in the context; FINISH (when allowed) ends the rollout and
//! nothing further is generated. The budget bounds the number of counted
//! search operations, so with the initial retrieval counted the policy has
//! `B - 1` search hops left.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{
    render_answer_prompt, render_react_prompt, Action, AnswerContext, PolicyError, PolicySpec, PromptSet,
    StepContext, StepProposal,
};
use crate::qa::{normalize_title, Document, QaExample};
use crate::retrieval::{dedup_against_context, Hit, RetrievedSet, Retriever};
use crate::util::write_jsonl;

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    InvalidConfig(String),
    #[error("rollout io: {0}")]
    Io(#[from] std::io::Error),
    #[error("rollout file line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub budget: usize,
    pub k: usize,
    pub initial_retrieval: bool,
    pub count_initial_in_searches: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            budget: 6,
            k: crate::retrieval::DEFAULT_K,
            initial_retrieval: true,
            count_initial_in_searches: true,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.budget < 1 {
            return Err(RolloutError::InvalidConfig(format!(
                "budget B must be >= 1, got {}",
                self.budget
            )));
        }
        if self.k < 1 {
            return Err(RolloutError::InvalidConfig(format!("k must be >= 1, got {}", self.k)));
        }
        Ok(())
    }

    fn initial_counted(&self) -> bool {
        self.initial_retrieval && self.count_initial_in_searches
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Termination {
    Finish,
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopRecord {
    pub hop_index: usize,
    pub proposal: StepProposal,
    /// Documents after deduplication against the context.
    pub retrieved: RetrievedSet,
    pub retrieval_ok: bool,
}

impl HopRecord {
    /// True for hops that spent a search operation, successful or not.
    pub fn is_search(&self) -> bool {
        !self.proposal.is_finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub example_id: String,
    pub question: String,
    pub initial_docs: RetrievedSet,
    pub initial_ok: bool,
    pub initial_counted: bool,
    pub hops: Vec<HopRecord>,
    /// Number of search operations executed (the latency of this rollout).
    pub h_term: usize,
    pub terminated_by: Termination,
    pub budget: usize,
    pub context_ids: BTreeSet<String>,
    pub answer: Option<String>,
}

impl Rollout {
    /// Context documents in retrieval order: `D_0` first, then each hop.
    pub fn context_documents(&self) -> impl Iterator<Item = &Document> {
        self.initial_docs
            .documents()
            .chain(self.hops.iter().flat_map(|h| h.retrieved.documents()))
    }

    pub fn context_titles(&self) -> Vec<&str> {
        self.context_documents().map(|d| d.title.as_str()).collect()
    }

    pub fn search_hops(&self) -> usize {
        self.hops.iter().filter(|h| h.is_search()).count()
    }
}

/// Which prompt set and sample slot a run uses. Plain rollouts use the
/// policy's own prompt set with index 0.
#[derive(Debug, Clone, Copy)]
pub struct RunSlot<'a> {
    pub prompt_set: &'a PromptSet,
    pub prompt_index: usize,
    pub sample_index: usize,
    pub allow_finish: bool,
}

/// Mutable state of one rollout in progress. Shared by the plain engine and
/// the best-of-n generator, which picks each hop from several candidates.
#[derive(Debug, Clone)]
pub struct RolloutState<'a> {
    pub example: &'a QaExample,
    pub config: RolloutConfig,
    pub initial: RetrievedSet,
    pub initial_ok: bool,
    pub hops: Vec<HopRecord>,
    pub context_ids: HashSet<String>,
    pub searches: usize,
    pub finished: bool,
}

impl<'a> RolloutState<'a> {
    pub fn start(example: &'a QaExample, retriever: &dyn Retriever, config: RolloutConfig) -> Self {
        let mut state = Self {
            example,
            config,
            initial: RetrievedSet::empty(&example.question, config.k),
            initial_ok: true,
            hops: Vec::new(),
            context_ids: HashSet::new(),
            searches: 0,
            finished: false,
        };
        if config.initial_retrieval {
            match retriever.retrieve(&example.question, config.k) {
                Ok(set) => state.initial = set,
                Err(err) => {
                    tracing::warn!(example = example.id, %err, "initial retrieval failed");
                    state.initial_ok = false;
                }
            }
            state.context_ids.extend(state.initial.doc_ids().map(str::to_owned));
            if config.count_initial_in_searches {
                state.searches = 1;
            }
        }
        state
    }

    pub fn can_continue(&self) -> bool {
        !self.finished && self.searches < self.config.budget
    }

    pub fn next_hop_index(&self) -> usize {
        self.hops.len() + 1
    }

    pub fn prompt(&self, prompt_set: &PromptSet) -> String {
        render_react_prompt(&self.example.question, &self.initial, &self.hops, prompt_set)
    }

    /// Asks the policy for the next step without applying it.
    pub fn propose(&self, policy: &PolicySpec, slot: RunSlot<'_>) -> StepProposal {
        let prompt = self.prompt(slot.prompt_set);
        let ctx = StepContext {
            example: self.example,
            initial: &self.initial,
            history: &self.hops,
            hop_index: self.next_hop_index(),
            prompt_set: slot.prompt_set,
            prompt_index: slot.prompt_index,
            sample_index: slot.sample_index,
            prompt: &prompt,
        };
        policy.propose_with(&ctx, slot.allow_finish)
    }

    /// Executes the retrieval a proposal asks for, deduplicated against the
    /// current context. Returns the hop without appending it.
    pub fn execute(&self, proposal: StepProposal, retriever: &dyn Retriever) -> HopRecord {
        let hop_index = self.next_hop_index();
        let k = self.config.k;
        let query = proposal.search_query.clone().unwrap_or_default();
        let (retrieved, retrieval_ok) = if proposal.is_finish() {
            (RetrievedSet::empty("", k), true)
        } else if !proposal.parse_ok {
            (RetrievedSet::empty(query, k), false)
        } else {
            match retriever.retrieve(&query, k) {
                Ok(set) => (dedup_against_context(set, &self.context_ids), true),
                Err(err) => {
                    tracing::warn!(example = self.example.id, hop = hop_index, %err, "retrieval failed");
                    (RetrievedSet::empty(query, k), false)
                }
            }
        };
        HopRecord {
            hop_index,
            proposal,
            retrieved,
            retrieval_ok,
        }
    }

    pub fn push(&mut self, hop: HopRecord) {
        debug_assert!(self.can_continue());
        if hop.proposal.is_finish() {
            self.finished = true;
        } else {
            self.searches += 1;
            self.context_ids.extend(hop.retrieved.doc_ids().map(str::to_owned));
        }
        self.hops.push(hop);
    }

    pub fn finish(self) -> Rollout {
        Rollout {
            example_id: self.example.id.clone(),
            question: self.example.question.clone(),
            initial_docs: self.initial,
            initial_ok: self.initial_ok,
            initial_counted: self.config.initial_counted(),
            hops: self.hops,
            h_term: self.searches,
            terminated_by: if self.finished { Termination::Finish } else { Termination::Budget },
            budget: self.config.budget,
            context_ids: self.context_ids.into_iter().collect(),
            answer: None,
        }
    }
}

/// Runs one rollout in the given prompt/sample slot.
pub fn run_rollout_in_slot(
    example: &QaExample,
    policy: &PolicySpec,
    retriever: &dyn Retriever,
    config: RolloutConfig,
    slot: RunSlot<'_>,
) -> Result<Rollout, RolloutError> {
    config.validate()?;
    let mut state = RolloutState::start(example, retriever, config);
    while state.can_continue() {
        let proposal = state.propose(policy, slot);
        let hop = state.execute(proposal, retriever);
        state.push(hop);
    }
    Ok(state.finish())
}

pub fn run_rollout(
    example: &QaExample,
    policy: &PolicySpec,
    retriever: &dyn Retriever,
    config: RolloutConfig,
) -> Result<Rollout, RolloutError> {
    let slot = RunSlot {
        prompt_set: &policy.prompt_set,
        prompt_index: 0,
        sample_index: 0,
        allow_finish: policy.allow_finish,
    };
    run_rollout_in_slot(example, policy, retriever, config, slot)
}

/// Invokes the generator once over the question and the full context.
pub fn generate_answer(rollout: &Rollout, generator: &PolicySpec) -> Result<String, PolicyError> {
    let prompt = render_answer_prompt(&rollout.question, rollout.context_documents());
    let first_title = rollout.context_documents().next().map(|d| d.title.as_str());
    generator.answer(&AnswerContext {
        example_id: &rollout.example_id,
        question: &rollout.question,
        first_title,
        prompt: &prompt,
    })
}

/// Document recall after each search operation, `D_0` counting as the first
/// operation when it is counted toward the budget.
pub fn recall_trajectory<S: AsRef<str>>(rollout: &Rollout, gold_titles: &[S]) -> Vec<f64> {
    let gold: HashSet<String> = gold_titles.iter().map(|t| normalize_title(t.as_ref())).collect();
    if gold.is_empty() {
        return vec![0.0; rollout.h_term];
    }
    let mut found: HashSet<String> = HashSet::new();
    let absorb = |docs: &RetrievedSet, found: &mut HashSet<String>| {
        for d in docs.documents() {
            let t = normalize_title(&d.title);
            if gold.contains(&t) {
                found.insert(t);
            }
        }
    };
    let mut out = Vec::with_capacity(rollout.h_term);
    absorb(&rollout.initial_docs, &mut found);
    if rollout.initial_counted {
        out.push(found.len() as f64 / gold.len() as f64);
    }
    for hop in rollout.hops.iter().filter(|h| h.is_search()) {
        absorb(&hop.retrieved, &mut found);
        out.push(found.len() as f64 / gold.len() as f64);
    }
    out
}

/// Runs rollouts for many questions on the current rayon pool, preserving
/// input order. With a generator, each rollout's answer is filled in.
pub fn run_rollouts(
    examples: &[QaExample],
    policy: &PolicySpec,
    generator: Option<&PolicySpec>,
    retriever: &dyn Retriever,
    config: RolloutConfig,
) -> Result<Vec<Rollout>, RolloutError> {
    config.validate()?;
    examples
        .par_iter()
        .map(|ex| {
            let mut rollout = run_rollout(ex, policy, retriever, config)?;
            if let Some(g) = generator {
                rollout.answer = Some(generate_answer(&rollout, g).unwrap_or_else(|err| {
                    tracing::warn!(example = ex.id, %err, "answer generation failed");
                    String::new()
                }));
            }
            Ok(rollout)
        })
        .collect()
}

// Wire format: the documented fields plus full documents so evaluation can
// compute supporting-evidence scores without the index.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HopWire {
    hop: usize,
    thought: String,
    action: Action,
    #[serde(default)]
    query: Option<String>,
    doc_ids: Vec<String>,
    retrieval_ok: bool,
    #[serde(default = "default_true")]
    parse_ok: bool,
    #[serde(default)]
    raw_text: String,
    #[serde(default)]
    docs: Vec<Hit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RolloutWire {
    example_id: String,
    h_term: usize,
    terminated_by: Termination,
    hops: Vec<HopWire>,
    initial_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    #[serde(default)]
    question: String,
    #[serde(default)]
    budget: usize,
    #[serde(default)]
    k: usize,
    #[serde(default)]
    initial_counted: bool,
    #[serde(default = "default_true")]
    initial_ok: bool,
    #[serde(default)]
    initial_docs: Vec<Hit>,
}

fn default_true() -> bool {
    true
}

impl From<&Rollout> for RolloutWire {
    fn from(r: &Rollout) -> Self {
        Self {
            example_id: r.example_id.clone(),
            h_term: r.h_term,
            terminated_by: r.terminated_by,
            hops: r
                .hops
                .iter()
                .map(|h| HopWire {
                    hop: h.hop_index,
                    thought: h.proposal.thought.clone(),
                    action: h.proposal.action,
                    query: h.proposal.search_query.clone(),
                    doc_ids: h.retrieved.doc_ids().map(str::to_owned).collect(),
                    retrieval_ok: h.retrieval_ok,
                    parse_ok: h.proposal.parse_ok,
                    raw_text: h.proposal.raw_text.clone(),
                    docs: h.retrieved.hits.clone(),
                })
                .collect(),
            initial_doc_ids: r.initial_docs.doc_ids().map(str::to_owned).collect(),
            answer: r.answer.clone(),
            question: r.question.clone(),
            budget: r.budget,
            k: r.initial_docs.k,
            initial_counted: r.initial_counted,
            initial_ok: r.initial_ok,
            initial_docs: r.initial_docs.hits.clone(),
        }
    }
}

fn placeholder_hits(ids: &[String]) -> Vec<Hit> {
    ids.iter()
        .map(|id| Hit {
            document: Document {
                doc_id: id.clone(),
                title: id.clone(),
                text: String::new(),
            },
            score: 0.0,
        })
        .collect()
}

impl From<RolloutWire> for Rollout {
    fn from(w: RolloutWire) -> Self {
        // Files written by other tools may carry ids only; titles then fall
        // back to the doc_id.
        let initial_hits = if w.initial_docs.is_empty() {
            placeholder_hits(&w.initial_doc_ids)
        } else {
            w.initial_docs
        };
        let k = w.k;
        let hops: Vec<HopRecord> = w
            .hops
            .into_iter()
            .map(|h| {
                let hits = if h.docs.is_empty() { placeholder_hits(&h.doc_ids) } else { h.docs };
                HopRecord {
                    hop_index: h.hop,
                    proposal: StepProposal {
                        thought: h.thought,
                        action: h.action,
                        search_query: h.query.clone(),
                        raw_text: h.raw_text,
                        parse_ok: h.parse_ok,
                    },
                    retrieved: RetrievedSet {
                        query: h.query.unwrap_or_default(),
                        hits,
                        k,
                    },
                    retrieval_ok: h.retrieval_ok,
                }
            })
            .collect();
        let initial_docs = RetrievedSet {
            query: w.question.clone(),
            hits: initial_hits,
            k,
        };
        let context_ids = initial_docs
            .doc_ids()
            .chain(hops.iter().flat_map(|h| h.retrieved.doc_ids()))
            .map(str::to_owned)
            .collect();
        Rollout {
            example_id: w.example_id,
            question: w.question,
            initial_docs,
            initial_ok: w.initial_ok,
            initial_counted: w.initial_counted,
            hops,
            h_term: w.h_term,
            terminated_by: w.terminated_by,
            budget: w.budget,
            context_ids,
            answer: w.answer,
        }
    }
}

impl Serialize for Rollout {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RolloutWire::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rollout {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        RolloutWire::deserialize(deserializer).map(Rollout::from)
    }
}

pub fn write_rollouts(path: &Path, rollouts: &[Rollout]) -> Result<usize, RolloutError> {
    Ok(write_jsonl(path, rollouts)?)
}

pub fn read_rollouts(path: &Path) -> Result<Vec<Rollout>, RolloutError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RolloutError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}
