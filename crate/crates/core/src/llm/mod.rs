//! Chat-completion access behind one interface: scripted, recorded,
//! replayed or remote, plus prompt templates and output parsers.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod parse;
#[cfg(feature = "http")]
mod remote;
mod replay;
pub mod template;

#[cfg(feature = "http")]
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{RecordingBackend, ReplayBackend, ReplayRecord, ReplayStore};
pub use template::{render_template, ModelTier, TemplateId, Vars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    pub params: ChatParams,
}

impl ChatExchange {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.last() {
            None => Err(LlmError::InvalidExchange("no messages".into())),
            Some(m) if m.role != Role::User => Err(LlmError::InvalidExchange("last message is not from the user".into())),
            _ => Ok(()),
        }
    }

    /// Message texts joined in order; what the key and budget look at.
    pub fn rendered(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Who is asking. Not part of the prompt key; stub backends use it to keep
/// agents and rounds apart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallOrigin {
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<u32>,
}

impl CallOrigin {
    pub fn agent(round: u32, agent: u32) -> Self {
        Self { round, agent: Some(agent) }
    }

    pub fn judge(round: u32) -> Self {
        Self { round, agent: None }
    }
}

/// One completion request as seen by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub template: TemplateId,
    pub exchange: ChatExchange,
    pub origin: CallOrigin,
}

impl LlmRequest {
    /// SHA-256 over template id, rendered text and params.
    pub fn key(&self) -> String {
        prompt_key(self.template, &self.exchange.rendered(), &self.exchange.params)
    }
}

pub fn prompt_key(template: TemplateId, rendered: &str, params: &ChatParams) -> String {
    let canonical = serde_json::json!([template.as_str(), rendered, params]);
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("no recorded response for {template} prompt (key {key})")]
    ReplayMiss { template: String, key: String },
    #[error("prompt needs about {estimated} tokens, budget is {limit}")]
    TokenBudgetExceeded { estimated: usize, limit: usize },
    #[error("invalid exchange: {0}")]
    InvalidExchange(String),
    #[error("template variable `{0}` not supplied")]
    MissingVariable(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("scripted backend has no response for {0}")]
    ScriptExhausted(String),
    #[error("backend: {0}")]
    Backend(String),
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> String;
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

/// Canned responses per template. Each (template, agent) pair walks its own
/// cursor through the queue; the last entry repeats once the queue runs out.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: BTreeMap<TemplateId, Vec<String>>,
    cursors: Mutex<HashMap<(TemplateId, Option<u32>), usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    template: String,
    response: String,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, template: TemplateId, response: impl Into<String>) -> Self {
        self.queues.entry(template).or_default().push(response.into());
        self
    }

    /// JSONL with one `{"template": ..., "response": ...}` object per line.
    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut s = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: ScriptLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let t = TemplateId::parse(&l.template).ok_or_else(|| format!("line {}: unknown template `{}`", i + 1, l.template))?;
            s = s.push(t, l.response);
        }
        Ok(s)
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let queue = self
            .queues
            .get(&request.template)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| LlmError::ScriptExhausted(request.template.to_string()))?;
        let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
        let c = cursors.entry((request.template, request.origin.agent)).or_insert(0);
        let out = queue[(*c).min(queue.len() - 1)].clone();
        *c += 1;
        Ok(out)
    }
}

/// A backend computed by a function of the request (rule-based planners,
/// test doubles).
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        (self.f)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRouting {
    pub strong: String,
    pub fast: String,
}

impl Default for ModelRouting {
    fn default() -> Self {
        Self {
            strong: "gpt-4".into(),
            fast: "gpt-3.5-turbo".into(),
        }
    }
}

impl ModelRouting {
    pub fn model_for(&self, template: TemplateId) -> &str {
        match template.tier() {
            ModelTier::Strong => &self.strong,
            ModelTier::Fast => &self.fast,
        }
    }
}

/// One completed call, as kept in transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCall {
    pub template: TemplateId,
    pub model_id: String,
    pub key: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AskError<E> {
    #[error(transparent)]
    Llm(LlmError),
    /// The completion still failed to parse after the re-prompt.
    #[error("unparseable completion after re-prompt: {error}")]
    Format { error: E, calls: Vec<LlmCall> },
}

/// Front door for all completions: routing, token budget, and the
/// one-re-prompt policy for malformed output.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    pub routing: ModelRouting,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Rough prompt budget in tokens (bytes / 4).
    pub max_prompt_tokens: usize,
    /// Session seed; each agent sends `seed + agent id`.
    pub seed: Option<u64>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend.name()).finish()
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            routing: ModelRouting::default(),
            temperature: 0.0,
            max_tokens: 1024,
            max_prompt_tokens: 32_000,
            seed: None,
        }
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    fn params(&self, template: TemplateId, origin: CallOrigin) -> ChatParams {
        ChatParams {
            model_id: self.routing.model_for(template).to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed.map(|s| s.wrapping_add(origin.agent.unwrap_or(0) as u64)),
        }
    }

    pub fn complete_messages(
        &self,
        template: TemplateId,
        messages: Vec<Message>,
        origin: CallOrigin,
    ) -> Result<LlmCall, LlmError> {
        let request = LlmRequest {
            template,
            exchange: ChatExchange {
                messages,
                params: self.params(template, origin),
            },
            origin,
        };
        request.exchange.validate()?;
        let prompt = request.exchange.rendered();
        let estimated = estimate_tokens(&prompt);
        if estimated > self.max_prompt_tokens {
            return Err(LlmError::TokenBudgetExceeded {
                estimated,
                limit: self.max_prompt_tokens,
            });
        }
        let response = self.backend.complete(&request)?;
        Ok(LlmCall {
            template,
            model_id: request.exchange.params.model_id.clone(),
            key: request.key(),
            prompt,
            response,
        })
    }

    pub fn complete(&self, template: TemplateId, prompt: &str, origin: CallOrigin) -> Result<LlmCall, LlmError> {
        self.complete_messages(
            template,
            vec![Message {
                role: Role::User,
                text: prompt.to_string(),
            }],
            origin,
        )
    }

    /// Completes and parses; on a parse failure asks once more with the
    /// template's format reminder appended, then gives up.
    pub fn ask<T, E>(
        &self,
        template: TemplateId,
        prompt: &str,
        origin: CallOrigin,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> Result<(T, Vec<LlmCall>), AskError<E>> {
        let first = self.complete(template, prompt, origin).map_err(AskError::Llm)?;
        match parse(&first.response) {
            Ok(v) => return Ok((v, vec![first])),
            Err(_) => {}
        }
        let messages = vec![
            Message { role: Role::User, text: prompt.to_string() },
            Message { role: Role::Assistant, text: first.response.clone() },
            Message { role: Role::User, text: template.format_reminder().to_string() },
        ];
        let second = self.complete_messages(template, messages, origin).map_err(AskError::Llm)?;
        let parsed = parse(&second.response);
        let calls = vec![first, second];
        match parsed {
            Ok(v) => Ok((v, calls)),
            Err(error) => Err(AskError::Format { error, calls }),
        }
    }
}
