//! Resolved configuration: flags over environment over file over defaults.
//!
//! Only `CCA_API_KEY` and `CCA_BASE_URL` are read from the environment. The
//! file has no place for the key, so it never ends up on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cca_core::orchestrator::SessionConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::exit::{CliResult, Exit, Failure};

pub const ENV_API_KEY: &str = "CCA_API_KEY";
pub const ENV_BASE_URL: &str = "CCA_BASE_URL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub session: SessionConfig,
    pub llm: LlmSection,
    pub evaluator: EvaluatorSection,
    pub tools: ToolsSection,
    /// Adapter processes or services, keyed by endpoint name.
    pub adapters: BTreeMap<String, AdapterSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// `remote`, `rule`, `well-formed`, `noisy` or `scripted:<file>`.
    pub backend: String,
    pub base_url: String,
    pub strong_model: String,
    pub fast_model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for LlmSection {
    fn default() -> Self {
        let routing = cca_core::llm::ModelRouting::default();
        Self {
            backend: "remote".into(),
            base_url: "https://api.openai.com/v1".into(),
            strong_model: routing.strong,
            fast_model: routing.fast,
            timeout_secs: 120,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSection {
    /// `property-oracle` or `adapter:<endpoint>`.
    pub vqa: String,
    /// Endpoint serving `AestheticScore`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<String>,
    /// Endpoint serving `LLaVA`, asked to describe the input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captioner: Option<String>,
}

impl Default for EvaluatorSection {
    fn default() -> Self {
        Self {
            vqa: "property-oracle".into(),
            aesthetic: None,
            captioner: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsSection {
    /// Registry directory; the built-in registry when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    /// Program and arguments of a stdio adapter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    /// URL of an HTTP adapter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

/// Everything a command needs, after merging all sources.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub file: FileConfig,
    pub api_key: Option<String>,
}

impl CliConfig {
    /// Resolved configuration as TOML, with the key redacted.
    pub fn render(&self) -> String {
        let body = toml::to_string_pretty(&self.file).expect("config serializes");
        let key = if self.api_key.is_some() { "set" } else { "unset" };
        format!("# {ENV_API_KEY}: {key}\n{body}")
    }
}

/// Session knobs shared by `edit` and `bench`.
#[derive(Debug, Clone, Default, Args)]
pub struct SessionFlags {
    /// Round budget [default: 5]
    #[arg(long)]
    pub max_rounds: Option<u32>,
    /// Generator agents, 1 to 3 [default: 2]
    #[arg(long)]
    pub agents: Option<u32>,
    /// on|off
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new(), hide_possible_values = true)]
    pub collaboration: Option<bool>,
    /// on|off
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new(), hide_possible_values = true)]
    pub competition: Option<bool>,
    /// Set by the command itself: `edit` and `bench` spell this flag differently.
    #[arg(skip)]
    pub early_stop: Option<bool>,
    /// Seed sent to the backend; `bench` also derives its tasks from it [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// on|off: split feedback per subtask with the language model
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new(), hide_possible_values = true)]
    pub llm_decompose: Option<bool>,
    /// Per-request adapter timeout [default: 60000]
    #[arg(long)]
    pub adapter_timeout_ms: Option<u64>,
}

/// Backend, evaluator and adapter wiring.
#[derive(Debug, Clone, Default, Args)]
pub struct WiringFlags {
    /// remote | rule | well-formed | noisy | scripted:<file>
    #[arg(long)]
    pub backend: Option<String>,
    /// Chat-completions base URL (also CCA_BASE_URL)
    #[arg(long)]
    pub base_url: Option<String>,
    /// Model for planning and reflection
    #[arg(long)]
    pub strong_model: Option<String>,
    /// Model for questions and tool calls
    #[arg(long)]
    pub fast_model: Option<String>,
    /// property-oracle | adapter:<endpoint>
    #[arg(long)]
    pub vqa: Option<String>,
    /// Endpoint serving AestheticScore
    #[arg(long)]
    pub aesthetic: Option<String>,
    /// Endpoint serving LLaVA for captions
    #[arg(long)]
    pub captioner: Option<String>,
    /// ENDPOINT=COMMAND for a stdio adapter (COMMAND split on whitespace)
    #[arg(long = "adapter", value_name = "ENDPOINT=COMMAND")]
    pub adapters: Vec<String>,
    /// ENDPOINT=URL for an HTTP adapter
    #[arg(long = "adapter-url", value_name = "ENDPOINT=URL")]
    pub adapter_urls: Vec<String>,
    /// Tool registry directory
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

pub fn load_file(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", path.display())))?;
    parse_file(&text).map_err(|e| Failure::msg(Exit::Config, format!("{}: {e}", path.display())))
}

pub fn parse_file(text: &str) -> Result<FileConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

fn split_pair(raw: &str, flag: &str) -> CliResult<(String, String)> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim().into(), v.trim().into())),
        _ => Err(Failure::msg(Exit::Config, format!("--{flag} expects ENDPOINT=VALUE, got `{raw}`"))),
    }
}

/// Merges the sources. `env` is passed in so tests need not touch the
/// process environment.
pub fn resolve(
    mut file: FileConfig,
    env: &dyn Fn(&str) -> Option<String>,
    session: &SessionFlags,
    wiring: &WiringFlags,
) -> CliResult<CliConfig> {
    let nonempty = |k: &str| env(k).filter(|v| !v.trim().is_empty());
    if let Some(url) = nonempty(ENV_BASE_URL) {
        file.llm.base_url = url;
    }
    let api_key = nonempty(ENV_API_KEY);

    let s = &mut file.session;
    macro_rules! take {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = session.$flag { s.$field = v; })*
        };
    }
    take!(max_rounds => max_rounds, agents => num_agents, collaboration => collaboration,
          competition => competition, early_stop => early_stop, seed => seed,
          llm_decompose => llm_decompose, adapter_timeout_ms => adapter_timeout_ms);

    let w = wiring;
    let l = &mut file.llm;
    for (flag, field) in [
        (&w.backend, &mut l.backend),
        (&w.base_url, &mut l.base_url),
        (&w.strong_model, &mut l.strong_model),
        (&w.fast_model, &mut l.fast_model),
        (&w.vqa, &mut file.evaluator.vqa),
    ] {
        if let Some(v) = flag {
            *field = v.clone();
        }
    }
    if w.aesthetic.is_some() {
        file.evaluator.aesthetic = w.aesthetic.clone();
    }
    if w.captioner.is_some() {
        file.evaluator.captioner = w.captioner.clone();
    }
    if w.registry.is_some() {
        file.tools.dir = w.registry.clone();
    }
    for raw in &w.adapters {
        let (name, cmd) = split_pair(raw, "adapter")?;
        let command = cmd.split_whitespace().map(String::from).collect();
        file.adapters.insert(name, AdapterSection { command: Some(command), url: None });
    }
    for raw in &w.adapter_urls {
        let (name, url) = split_pair(raw, "adapter-url")?;
        file.adapters.insert(name, AdapterSection { command: None, url: Some(url) });
    }
    let cfg = CliConfig { file, api_key };
    check(&cfg)?;
    Ok(cfg)
}

fn check(cfg: &CliConfig) -> CliResult {
    let bad = |m: String| Err(Failure::msg(Exit::Config, m));
    cfg.file.session.validate().map_err(|e| Failure::msg(Exit::Config, e))?;
    for (name, a) in &cfg.file.adapters {
        match (&a.command, &a.url) {
            (Some(c), None) if !c.is_empty() => {}
            (None, Some(_)) => {}
            _ => return bad(format!("adapter `{name}` needs exactly one of a non-empty `command` or a `url`")),
        }
    }
    let ev = &cfg.file.evaluator;
    if ev.vqa != "property-oracle" {
        match ev.vqa.strip_prefix("adapter:") {
            Some(ep) if cfg.file.adapters.contains_key(ep) => {}
            Some(ep) => return bad(format!("evaluator uses adapter `{ep}`, which is not configured")),
            None => return bad(format!("unknown evaluator `{}`", ev.vqa)),
        }
    }
    for ep in ev.aesthetic.iter().chain(&ev.captioner) {
        if !cfg.file.adapters.contains_key(ep) {
            return bad(format!("evaluator uses adapter `{ep}`, which is not configured"));
        }
    }
    Ok(())
}
