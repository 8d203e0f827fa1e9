use std::collections::HashMap;
use std::sync::OnceLock;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{render_step, Action, AnswerContext, PolicyError, StepContext, StepProposal};
use crate::util::derived_rng;

/// Environment variable consulted when a remote backend has no endpoint.
pub const REMOTE_POLICY_URL_ENV: &str = "REMOTE_POLICY_URL";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    Scripted(ScriptedBackend),
    StochasticMock(MockBackend),
    Remote(RemoteBackend),
}

impl Backend {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            Backend::Scripted(_) => Ok(()),
            Backend::StochasticMock(m) => m.validate(),
            Backend::Remote(r) => r.validate(),
        }
    }

    pub(super) fn generate(&self, ctx: &StepContext<'_>) -> Result<String, PolicyError> {
        match self {
            Backend::Scripted(s) => Ok(s.generate(ctx)),
            Backend::StochasticMock(m) => Ok(m.generate(ctx)),
            Backend::Remote(r) => r.chat(ctx.prompt, r.max_tokens),
        }
    }

    pub(super) fn answer(&self, ctx: &AnswerContext<'_>) -> Result<String, PolicyError> {
        match self {
            Backend::Scripted(s) => Ok(s.answers.get(ctx.example_id).cloned().unwrap_or_default()),
            Backend::StochasticMock(_) => Ok(ctx.first_title.unwrap_or_default().to_owned()),
            Backend::Remote(r) => r.chat(ctx.prompt, r.max_tokens).map(|s| s.trim().to_owned()),
        }
    }
}

/// One scripted step. `raw`, when present, is emitted verbatim instead of the
/// rendered step, which lets scripts exercise malformed outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedStep {
    #[serde(default)]
    pub thought: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl ScriptedStep {
    pub fn search(thought: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            thought: thought.into(),
            action: Action::Search,
            query: Some(query.into()),
            raw: None,
        }
    }

    pub fn finish(thought: impl Into<String>) -> Self {
        Self {
            thought: thought.into(),
            action: Action::Finish,
            query: None,
            raw: None,
        }
    }

    pub fn raw(text: impl Into<String>) -> Self {
        Self {
            thought: String::new(),
            action: Action::Search,
            query: None,
            raw: Some(text.into()),
        }
    }

    fn render(&self) -> String {
        if let Some(raw) = &self.raw {
            return raw.clone();
        }
        render_step(&StepProposal {
            thought: self.thought.clone(),
            action: self.action,
            search_query: self.query.clone(),
            raw_text: String::new(),
            parse_ok: true,
        })
    }
}

/// Steps for one question. `per_prompt` overrides `steps` for specific
/// prompt-set ids, which is how multi-prompt candidates are scripted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTrace {
    #[serde(default)]
    pub steps: Vec<ScriptedStep>,
    #[serde(default)]
    pub per_prompt: HashMap<String, Vec<ScriptedStep>>,
}

/// Table-driven backend. A script past its last step emits FINISH.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    #[serde(default)]
    pub traces: HashMap<String, ScriptedTrace>,
    #[serde(default)]
    pub answers: HashMap<String, String>,
}

impl ScriptedBackend {
    fn generate(&self, ctx: &StepContext<'_>) -> String {
        let steps = self.traces.get(&ctx.example.id).map(|t| {
            t.per_prompt
                .get(&ctx.prompt_set.id)
                .unwrap_or(&t.steps)
        });
        match steps.and_then(|s| s.get(ctx.hop_index - 1)) {
            Some(step) => step.render(),
            None => ScriptedStep::finish("The script has no further steps.").render(),
        }
    }
}

/// Seeded random policy for fuzzing and smoke runs.
///
/// Each step draws from an RNG derived from (seed, example, hop, prompt,
/// sample), so output does not depend on execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBackend {
    pub seed: u64,
    /// FINISH probability per hop; the last entry repeats.
    pub finish_prob: Vec<f64>,
    #[serde(default)]
    pub malformed_prob: f64,
    /// Probability of re-issuing the question instead of following a title.
    #[serde(default = "default_question_prob")]
    pub question_prob: f64,
}

fn default_question_prob() -> f64 {
    0.3
}

impl MockBackend {
    pub fn new(seed: u64, finish_prob: Vec<f64>) -> Self {
        Self {
            seed,
            finish_prob,
            malformed_prob: 0.0,
            question_prob: default_question_prob(),
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let probs = self
            .finish_prob
            .iter()
            .chain([&self.malformed_prob, &self.question_prob]);
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PolicyError::InvalidSpec(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.finish_prob.is_empty() {
            return Err(PolicyError::InvalidSpec("finish_prob must not be empty".into()));
        }
        Ok(())
    }

    fn generate(&self, ctx: &StepContext<'_>) -> String {
        let mut rng = derived_rng(
            self.seed,
            &ctx.example.id,
            &[ctx.hop_index as u64, ctx.prompt_index as u64, ctx.sample_index as u64],
        );
        if rng.random_bool(self.malformed_prob) {
            return "I am not sure what to do next.".into();
        }
        let finish_p = self
            .finish_prob
            .get(ctx.hop_index - 1)
            .or(self.finish_prob.last())
            .copied()
            .unwrap_or(0.0);
        if rng.random_bool(finish_p) {
            return "Thought: I have enough evidence to answer.\nAction: Finish[]".into();
        }
        let latest: Vec<&str> = ctx
            .history
            .iter()
            .rev()
            .find(|h| !h.retrieved.is_empty())
            .map(|h| &h.retrieved)
            .unwrap_or(ctx.initial)
            .hits
            .iter()
            .map(|h| h.document.title.as_str())
            .collect();
        let query = if latest.is_empty() || rng.random_bool(self.question_prob) {
            ctx.example.question.clone()
        } else {
            latest[rng.random_range(0..latest.len())].to_owned()
        };
        let query: String = query
            .chars()
            .map(|c| if matches!(c, '[' | ']') { ' ' } else { c })
            .collect();
        let query = if query.trim().is_empty() { "information".to_owned() } else { query };
        format!("Thought: I should look up {}.\nAction: Search[{}]", query.trim(), query.trim())
    }
}

/// Chat-completion endpoint speaking `POST {endpoint}/v1/step`.
///
/// Request `{"messages": [{"role", "content"}], "temperature", "max_tokens",
/// "model"}`, response `{"text": str}`. The bearer token, if any, is read
/// from the environment variable named by `api_key_env`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RemoteBackend {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(skip)]
    agent: OnceLock<ureq::Agent>,
}

impl Clone for RemoteBackend {
    fn clone(&self) -> Self {
        Self {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout_secs: self.timeout_secs,
            api_key_env: self.api_key_env.clone(),
            agent: OnceLock::new(),
        }
    }
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    256
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_api_key_env() -> String {
    "REMOTE_POLICY_API_KEY".into()
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct StepRequest<'a> {
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "str::is_empty")]
    model: &'a str,
}

#[derive(Deserialize)]
struct StepResponse {
    text: String,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            model: String::new(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout_secs(),
            api_key_env: default_api_key_env(),
            agent: OnceLock::new(),
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if self.resolved_endpoint().is_none() {
            return Err(PolicyError::InvalidSpec(format!(
                "remote backend needs an endpoint or {REMOTE_POLICY_URL_ENV}"
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(PolicyError::InvalidSpec("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(PolicyError::InvalidSpec("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    fn resolved_endpoint(&self) -> Option<String> {
        self.endpoint
            .clone()
            .or_else(|| std::env::var(REMOTE_POLICY_URL_ENV).ok())
            .filter(|s| !s.is_empty())
    }

    fn agent(&self) -> &ureq::Agent {
        self.agent.get_or_init(|| {
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(self.timeout_secs)))
                .http_status_as_error(false)
                .build()
                .new_agent()
        })
    }

    pub fn chat(&self, prompt: &str, max_tokens: u32) -> Result<String, PolicyError> {
        let endpoint = self
            .resolved_endpoint()
            .ok_or_else(|| PolicyError::InvalidSpec("no endpoint".into()))?;
        let url = format!("{}/v1/step", endpoint.trim_end_matches('/'));
        let body = StepRequest {
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
            max_tokens,
            model: &self.model,
        };
        let mut req = self.agent().post(&url);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(PolicyError::Transport(format!(
                "{url} returned HTTP {}",
                resp.status().as_u16()
            )));
        }
        let parsed: StepResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| PolicyError::Malformed(e.to_string()))?;
        Ok(parsed.text)
    }
}
