//! OpenAI-compatible chat-completions endpoint.

use std::time::Duration;

use super::{ChatBackend, LlmError, LlmRequest, Role};
use crate::net;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, String> {
        net::begin_call().map_err(|e| e.to_string())?;
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()));
        }
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("bad JSON: {e}"))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".into())
    }
}

impl ChatBackend for RemoteBackend {
    fn name(&self) -> String {
        format!("remote:{}", self.config.base_url)
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let p = &request.exchange.params;
        let messages: Vec<serde_json::Value> = request
            .exchange
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                serde_json::json!({ "role": role, "content": m.text })
            })
            .collect();
        let mut body = serde_json::json!({
            "model": p.model_id,
            "messages": messages,
            "temperature": p.temperature,
            "max_tokens": p.max_tokens,
        });
        if let Some(seed) = p.seed {
            body["seed"] = seed.into();
        }
        let mut backoff = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts.max(1) {
            if net::is_forbidden() {
                let _ = net::begin_call();
                return Err(LlmError::Network { attempts: attempt, message: "network forbidden".into() });
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
            if attempt < self.config.max_attempts {
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(self.config.max_backoff);
            }
        }
        Err(LlmError::Network {
            attempts: self.config.max_attempts.max(1),
            message: last,
        })
    }
}
