//! Step generation for the ReAct loop.
//!
//! A [`PolicySpec`] pairs a backend (scripted table, seeded mock, or a remote
//! chat-completion endpoint) with the prompt set it renders and whether the
//! FINISH action is allowed. The same spec also acts as the answer generator
//! once a rollout terminates.

mod backend;
mod bootstrap;
mod parse;
mod prompt;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::qa::QaExample;
use crate::retrieval::RetrievedSet;
use crate::rollout::HopRecord;

pub use backend::{Backend, MockBackend, RemoteBackend, ScriptedBackend, ScriptedStep, ScriptedTrace};
pub use bootstrap::{bootstrap_prompts, BootstrapConfig, BootstrapOutcome, CandidateScore};
pub use parse::parse_step;
pub use prompt::{render_answer_prompt, render_observation, render_react_prompt, render_step, render_trace};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy transport failure: {0}")]
    Transport(String),
    #[error("policy returned a malformed body: {0}")]
    Malformed(String),
    #[error("invalid policy spec: {0}")]
    InvalidSpec(String),
    #[error("policy spec io: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy spec json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bootstrap harvested no successful traces from {0} seed examples; use a stronger backend or more seed examples")]
    NoSuccessfulTraces(usize),
    #[error("bootstrap needs keep <= candidate_count and at least one seed example (keep={keep}, candidates={candidates}, seeds={seeds})")]
    InvalidBootstrap {
        keep: usize,
        candidates: usize,
        seeds: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "SEARCH", alias = "search", alias = "Search")]
    Search,
    #[serde(rename = "FINISH", alias = "finish", alias = "Finish")]
    Finish,
}

/// One parsed model step: thought, action and (for SEARCH) the query.
///
/// When `parse_ok` is false the action is `Search` with no query and the hop
/// is treated as a failed retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepProposal {
    pub thought: String,
    pub action: Action,
    pub search_query: Option<String>,
    pub raw_text: String,
    pub parse_ok: bool,
}

impl StepProposal {
    pub fn search(thought: impl Into<String>, query: impl Into<String>) -> Self {
        let mut p = Self {
            thought: thought.into(),
            action: Action::Search,
            search_query: Some(query.into()),
            raw_text: String::new(),
            parse_ok: true,
        };
        p.raw_text = render_step(&p);
        p
    }

    pub fn finish(thought: impl Into<String>) -> Self {
        let mut p = Self {
            thought: thought.into(),
            action: Action::Finish,
            search_query: None,
            raw_text: String::new(),
            parse_ok: true,
        };
        p.raw_text = render_step(&p);
        p
    }

    pub fn failed(raw_text: impl Into<String>) -> Self {
        Self {
            thought: String::new(),
            action: Action::Search,
            search_query: None,
            raw_text: raw_text.into(),
            parse_ok: false,
        }
    }

    pub fn is_finish(&self) -> bool {
        self.parse_ok && self.action == Action::Finish
    }
}

/// Instruction plus few-shot demonstrations, each serialized in the hop
/// format produced by [`render_trace`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub demos: Vec<String>,
}

pub const DEFAULT_INSTRUCTION: &str = "Answer the question by interleaving Thought and Action steps. \
Action can be Search[query], which returns relevant documents as an Observation, \
or Finish[], which ends the search once enough evidence has been gathered.";

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            id: "zero-shot".into(),
            instruction: DEFAULT_INSTRUCTION.into(),
            demos: Vec::new(),
        }
    }
}

impl PromptSet {
    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Reads either a single prompt-set object or an array of them.
    pub fn load_many(path: &Path) -> Result<Vec<Self>, PolicyError> {
        let value: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
        let sets = match value {
            serde_json::Value::Array(_) => serde_json::from_value(value)?,
            other => vec![serde_json::from_value(other)?],
        };
        Ok(sets)
    }
}

/// Everything a backend may look at when producing the next step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub example: &'a QaExample,
    pub initial: &'a RetrievedSet,
    pub history: &'a [HopRecord],
    /// 1-based index of the hop being generated.
    pub hop_index: usize,
    pub prompt_set: &'a PromptSet,
    pub prompt_index: usize,
    /// Distinguishes the members of a sampled group.
    pub sample_index: usize,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct AnswerContext<'a> {
    pub example_id: &'a str,
    pub question: &'a str,
    pub first_title: Option<&'a str>,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(default = "default_policy_id")]
    pub id: String,
    pub backend: Backend,
    #[serde(default)]
    pub prompt_set: PromptSet,
    #[serde(default = "default_true")]
    pub allow_finish: bool,
}

fn default_policy_id() -> String {
    "policy".into()
}

fn default_true() -> bool {
    true
}

impl PolicySpec {
    pub fn new(backend: Backend) -> Self {
        Self {
            id: default_policy_id(),
            backend,
            prompt_set: PromptSet::default(),
            allow_finish: true,
        }
    }

    pub fn with_allow_finish(mut self, allow: bool) -> Self {
        self.allow_finish = allow;
        self
    }

    pub fn with_prompt_set(mut self, prompt_set: PromptSet) -> Self {
        self.prompt_set = prompt_set;
        self
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let spec: Self = serde_json::from_slice(&fs::read(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.backend.validate()
    }

    /// Generates, parses and (in exploration mode) rewrites the next step.
    pub fn propose(&self, ctx: &StepContext<'_>) -> StepProposal {
        self.propose_with(ctx, self.allow_finish)
    }

    /// Like [`propose`](Self::propose) with an explicit FINISH setting.
    ///
    /// With `allow_finish = false` a FINISH step becomes a SEARCH for the
    /// original question.
    pub fn propose_with(&self, ctx: &StepContext<'_>, allow_finish: bool) -> StepProposal {
        let proposal = match self.backend.generate(ctx) {
            Ok(raw) => parse_step(&raw),
            Err(err) => {
                tracing::warn!(example = ctx.example.id, hop = ctx.hop_index, %err, "step generation failed");
                StepProposal::failed(String::new())
            }
        };
        if !allow_finish && proposal.is_finish() {
            return StepProposal {
                action: Action::Search,
                search_query: Some(ctx.example.question.clone()),
                ..proposal
            };
        }
        proposal
    }

    pub fn answer(&self, ctx: &AnswerContext<'_>) -> Result<String, PolicyError> {
        self.backend.answer(ctx)
    }
}
