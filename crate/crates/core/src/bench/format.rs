//! Format-success measurement: how often planner and executor output parses
//! on the first try, for the two-level prompting scheme and for a single
//! prompt that asks for plan and calls at once.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rule::{call_for, request_in};
use crate::generator::display_path;
use crate::artifact::ArtifactId;
use crate::llm::parse::{numbered_items, parse_plan, parse_tool_call, PlanItem, ToolCallLine};
use crate::llm::template::{render_template, Vars};
use crate::llm::{CallOrigin, ChatBackend, Gateway, LlmError, LlmRequest, TemplateId};
use crate::registry::{normalize_name, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatMode {
    /// Plan first, then one executor prompt per subtask.
    Hierarchical,
    /// Plan and every call in one completion.
    OneStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatFailure {
    pub prompt: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatReport {
    pub mode: FormatMode,
    pub prompts: usize,
    pub successes: usize,
    pub rate: f64,
    pub failures: Vec<FormatFailure>,
}

pub fn load_corpus(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn clauses(goal: &str) -> Vec<String> {
    goal.trim()
        .trim_end_matches('.')
        .split(", ")
        .flat_map(|c| c.split(" and "))
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect()
}

/// Answers every planner and executor prompt in the expected format, routing
/// each clause of the request to the general-purpose editing tool.
pub struct WellFormedBackend;

pub const GENERAL_TOOL: &str = "InstructDiffusion";

fn general_call(image: &str, clause: &str) -> String {
    ToolCallLine::new(GENERAL_TOOL, vec![image.to_string(), clause.replace("<->", "-")]).render()
}

impl ChatBackend for WellFormedBackend {
    fn name(&self) -> String {
        "well-formed".into()
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let prompt = req.exchange.messages.first().map(|m| m.text.as_str()).unwrap_or_default();
        let goal = || request_in(prompt).unwrap_or_default();
        let image = display_path(&ArtifactId::input());
        match req.template {
            TemplateId::PlannerInitial => Ok(clauses(&goal())
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{}. {c} using {GENERAL_TOOL}", i + 1))
                .collect::<Vec<_>>()
                .join("\n")),
            TemplateId::PlannerOnestage => Ok(clauses(&goal())
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{}. {c} using {GENERAL_TOOL}\n{}", i + 1, general_call(&image, c)))
                .collect::<Vec<_>>()
                .join("\n")),
            TemplateId::ExecutorToolcall => {
                let field = |label: &str| {
                    prompt.lines().find_map(|l| l.strip_prefix(label)).map(str::trim).unwrap_or_default().to_string()
                };
                let tool = prompt
                    .split("running the tool `")
                    .nth(1)
                    .and_then(|r| r.split('`').next())
                    .unwrap_or_default()
                    .to_string();
                let subtask = field("Subtask:");
                let image = field("Current image:");
                if normalize_name(&tool) == normalize_name(GENERAL_TOOL) {
                    Ok(general_call(&image, &subtask))
                } else {
                    Ok(call_for(&tool, &subtask, &image))
                }
            }
            other => Err(LlmError::Backend(format!("well-formed backend does not answer {other} prompts"))),
        }
    }
}

/// Corrupts a share of completions that grows with prompt length, the way
/// long prompts make a model lose track of the requested format. Which
/// completions are hit is fixed by the prompt key and `seed`.
pub struct NoisyFormat {
    pub inner: Arc<dyn ChatBackend>,
    pub seed: u64,
    /// Prompt length in bytes at which corruption becomes certain.
    pub saturation: usize,
    /// Corruption probability floor for any prompt.
    pub base: f64,
}

impl NoisyFormat {
    pub fn new(inner: Arc<dyn ChatBackend>, seed: u64) -> Self {
        Self {
            inner,
            seed,
            saturation: 24_000,
            base: 0.005,
        }
    }

    pub fn probability(&self, prompt_len: usize) -> f64 {
        (self.base + prompt_len as f64 / self.saturation as f64).min(1.0)
    }

    fn draw(&self, key: &str) -> (f64, u8) {
        let d = Sha256::digest(format!("{}|{key}", self.seed).as_bytes());
        let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        ((x >> 11) as f64 / (1u64 << 53) as f64, d[8])
    }
}

fn corrupt(text: &str, kind: u8) -> String {
    let strip_numbers = || {
        text.lines()
            .map(|l| l.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ' '))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let prose_call = || text.replace("@@", "with arguments").replace("<->", "and");
    match (numbered_items(text).is_empty(), text.contains("@@")) {
        (false, true) if kind % 2 == 0 => strip_numbers(),
        (_, true) => prose_call(),
        _ => strip_numbers(),
    }
}

impl ChatBackend for NoisyFormat {
    fn name(&self) -> String {
        format!("noisy({})", self.inner.name())
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let text = self.inner.complete(req)?;
        let (u, kind) = self.draw(&req.key());
        if u < self.probability(req.exchange.rendered().len()) {
            Ok(corrupt(&text, kind))
        } else {
            Ok(text)
        }
    }
}

/// Items of a one-stage reply, each with the call line that follows it.
pub fn parse_one_stage(text: &str, registry: &Registry) -> Result<Vec<(PlanItem, ToolCallLine)>, String> {
    let items = numbered_items(text);
    if items.is_empty() {
        return Err("no numbered subtasks".into());
    }
    items
        .iter()
        .map(|item| {
            let plan = parse_plan(&format!("1. {}", item.lines().next().unwrap_or_default()), registry)
                .map_err(|e| e.to_string())?
                .remove(0);
            let call_text = item.lines().skip(1).find(|l| l.contains("@@")).ok_or("subtask without a call")?;
            let call = parse_tool_call(call_text).map_err(|e| e.to_string())?;
            check_call(&call, &plan.tool_name, registry)?;
            Ok((plan, call))
        })
        .collect()
}

fn check_call(call: &ToolCallLine, tool: &str, registry: &Registry) -> Result<(), String> {
    let spec = registry.get(tool).ok_or_else(|| format!("unknown tool `{tool}`"))?;
    if normalize_name(&call.tool) != normalize_name(&spec.name) {
        return Err(format!("call names `{}`, plan names `{}`", call.tool, spec.name));
    }
    spec.bind(&call.args).map(|_| ()).map_err(|e| e.to_string())
}

fn base_vars(registry: &Registry, goal: &str) -> Result<Vars, String> {
    let view = registry.planner_view().map_err(|e| e.to_string())?;
    Ok([
        ("IMAGE_PATH", display_path(&ArtifactId::input())),
        ("EDITING_REQUEST", goal.to_string()),
        ("TOOL_NAMES", view.tool_names()),
        ("TOOL_DESCRIPTIONS", view.tool_descriptions()),
    ]
    .into())
}

/// One prompt: Ok when every completion parsed on the first attempt.
fn one_prompt(gateway: &Gateway, registry: &Registry, goal: &str, mode: FormatMode, idx: u32) -> Result<(), String> {
    let origin = CallOrigin::agent(idx, 1);
    let mut vars = base_vars(registry, goal)?;
    let first_try = |calls: usize| if calls == 1 { Ok(()) } else { Err("needed a re-prompt".to_string()) };
    match mode {
        FormatMode::OneStage => {
            let manuals = registry
                .tools()
                .iter()
                .map(|t| format!("{}\n{}", t.name, t.manual.trim()))
                .collect::<Vec<_>>()
                .join("\n\n");
            vars.insert("MANUALS", manuals);
            let prompt = render_template(TemplateId::PlannerOnestage, &vars).map_err(|e| e.to_string())?;
            let (_, calls) = gateway
                .ask(TemplateId::PlannerOnestage, &prompt, origin, |t| parse_one_stage(t, registry))
                .map_err(|e| e.to_string())?;
            first_try(calls.len())
        }
        FormatMode::Hierarchical => {
            let prompt = render_template(TemplateId::PlannerInitial, &vars).map_err(|e| e.to_string())?;
            let (items, calls) = gateway
                .ask(TemplateId::PlannerInitial, &prompt, origin, |t| parse_plan(t, registry))
                .map_err(|e| e.to_string())?;
            first_try(calls.len())?;
            let image = display_path(&ArtifactId::input());
            for item in items {
                let spec = registry.get(&item.tool_name).ok_or("planned tool vanished")?;
                let vars: Vars = [
                    ("TOOL_NAME", spec.name.clone()),
                    ("SUBTASK", item.goal_text.clone()),
                    ("IMAGE_PATH", image.clone()),
                    ("MANUAL", spec.manual.trim().to_string()),
                    ("PREVIOUS_CALL", String::new()),
                    ("FEEDBACK", String::new()),
                ]
                .into();
                let prompt = render_template(TemplateId::ExecutorToolcall, &vars).map_err(|e| e.to_string())?;
                let (_, calls) = gateway
                    .ask(TemplateId::ExecutorToolcall, &prompt, origin, |t| {
                        let call = parse_tool_call(t).map_err(|e| e.to_string())?;
                        check_call(&call, &spec.name, registry)
                    })
                    .map_err(|e| e.to_string())?;
                first_try(calls.len())?;
            }
            Ok(())
        }
    }
}

/// Share of prompts whose plan and calls all parse without a re-prompt.
pub fn measure_format_success(gateway: &Gateway, registry: &Registry, prompts: &[String], mode: FormatMode) -> FormatReport {
    let mut failures = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        if let Err(reason) = one_prompt(gateway, registry, p, mode, i as u32 + 1) {
            failures.push(FormatFailure { prompt: p.clone(), reason });
        }
    }
    let successes = prompts.len() - failures.len();
    FormatReport {
        mode,
        prompts: prompts.len(),
        successes,
        rate: if prompts.is_empty() { 0.0 } else { successes as f64 / prompts.len() as f64 },
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompts() -> Vec<String> {
        vec![
            "Make the sky bluer and add a small logo in the corner.".into(),
            "Blur the background, crop to the face and resize it to 512 pixels.".into(),
        ]
    }

    #[test]
    fn clean_backend_always_succeeds() {
        let reg = Registry::shipped();
        let gw = Gateway::new(Arc::new(WellFormedBackend));
        for mode in [FormatMode::Hierarchical, FormatMode::OneStage] {
            let r = measure_format_success(&gw, &reg, &prompts(), mode);
            assert_eq!(r.successes, 2, "{mode:?}: {:?}", r.failures);
        }
    }

    #[test]
    fn one_stage_parse_rejects_missing_calls() {
        let reg = Registry::shipped();
        assert!(parse_one_stage("1. Blur it using GaussianBlur\n", &reg).is_err());
        let ok = parse_one_stage("1. Blur it using GaussianBlur\nGaussianBlur @@ image/input.png <-> 5\n", &reg).unwrap();
        assert_eq!(ok[0].1.args[1], "5");
        assert!(parse_one_stage("1. Blur it using GaussianBlur\nResize @@ image/input.png <-> 5\n", &reg).is_err());
    }

    #[test]
    fn corruption_always_breaks_parsing() {
        let reg = Registry::shipped();
        let text = "1. Blur it using GaussianBlur\nGaussianBlur @@ image/input.png <-> 5";
        for k in 0..2 {
            assert!(parse_one_stage(&corrupt(text, k), &reg).is_err(), "kind {k}");
        }
        assert!(parse_plan(&corrupt("1. Blur it using GaussianBlur", 0), &reg).is_err());
        assert!(parse_tool_call(&corrupt("GaussianBlur @@ a <-> 5", 0)).is_err());
    }
}
