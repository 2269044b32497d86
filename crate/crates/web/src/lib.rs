//! Browser bindings: run tool calls, check plans and play whole sessions
//! with the rule planner, all inside the page.
//!
//! The plain functions carry the logic and are tested natively; the
//! `wasm_bindgen` exports only convert arguments and errors.

use std::fmt::Write as _;
use std::sync::Arc;

use cca_core::adapter::AdapterPool;
use cca_core::artifact::{bundled_asset, Payload};
use cca_core::bench::{gen_tasks, RuleBackend, RuleConfig};
use cca_core::discriminator::PropertyOracle;
use cca_core::generator::UserRequest;
use cca_core::llm::parse::{parse_plan, parse_tool_call};
use cca_core::orchestrator::{Evaluator, Session, SessionConfig, Transcript};
use cca_core::raster::Raster;
use cca_core::registry::{ArgValue, Registry, ToolKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// An image plus a human-readable account of how it was made.
#[wasm_bindgen]
pub struct Outcome {
    png: Vec<u8>,
    report: String,
}

#[wasm_bindgen]
impl Outcome {
    pub fn png(&self) -> Vec<u8> {
        self.png.clone()
    }

    pub fn report(&self) -> String {
        self.report.clone()
    }
}

fn encode(img: &Raster) -> Result<Vec<u8>, String> {
    img.to_png().map_err(|e| e.to_string())
}

fn decode(png: &[u8]) -> Result<Raster, String> {
    Raster::from_encoded(png).map_err(|e| format!("cannot read the image: {e}"))
}

pub fn sample(seed: u64) -> Raster {
    cca_core::bench::task::procedural_image(seed, 96, 64)
}

/// Requests the rule planner understands.
pub fn goals(seed: u64, n: usize) -> Vec<String> {
    gen_tasks(seed, n, 3).into_iter().map(|t| t.goal).collect()
}

/// Runs `@@` call lines one after another on `img`. Blank lines and lines
/// starting with `#` are skipped.
pub fn apply_lines(img: Raster, text: &str) -> Result<(Raster, Vec<String>), String> {
    let registry = Registry::shipped();
    let mut current = Payload::raster(img);
    let mut log = Vec::new();
    for (n, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |e: String| format!("line {n}: {e}");
        let call = parse_tool_call(line).map_err(|e| fail(e.to_string()))?;
        let spec = registry.get(&call.tool).ok_or_else(|| fail(format!("unknown tool `{}`", call.tool)))?;
        if let ToolKind::External { endpoint } = &spec.kind {
            return Err(fail(format!("{} needs the `{endpoint}` adapter, which a browser cannot reach", spec.name)));
        }
        let bound = spec.bind(&call.args).map_err(|e| fail(e.to_string()))?;
        let mut extra = Vec::new();
        for (i, arg) in spec.path_args().enumerate().skip(1) {
            let value = bound.iter().find(|(k, _)| *k == arg.name).map(|(_, v)| v);
            let Some(ArgValue::Path(p)) = value else {
                return Err(fail(format!("argument {} is missing", i + 1)));
            };
            let asset = p
                .strip_prefix("builtin:")
                .and_then(bundled_asset)
                .ok_or_else(|| fail(format!("only bundled images (e.g. builtin:watermark) can be used here, not `{p}`")))?;
            extra.push(Payload::raster(asset));
        }
        let mut inputs = vec![&current];
        inputs.extend(extra.iter());
        let out = registry.invoke_builtin(&spec.name, &bound, &inputs).map_err(|e| fail(e.to_string()))?;
        match out {
            Payload::Raster(r) => {
                log.push(format!("{}: {}x{}", spec.name, r.width(), r.height()));
                current = Payload::Raster(r);
            }
            Payload::Scalar(v) => log.push(format!("{}: {v}", spec.name)),
            Payload::Text(t) => log.push(format!("{}: {t}", spec.name)),
        }
    }
    let img = current.as_raster().expect("the chain only advances on images").as_ref().clone();
    Ok((img, log))
}

#[derive(Debug, Serialize)]
pub struct PlanCheck {
    pub ok: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn check_plan_text(text: &str) -> PlanCheck {
    match parse_plan(text, &Registry::shipped()) {
        Ok(items) => PlanCheck {
            ok: true,
            steps: items.into_iter().map(|i| (i.goal_text, i.tool_name)).collect(),
            error: None,
        },
        Err(e) => PlanCheck { ok: false, steps: Vec::new(), error: Some(e.to_string()) },
    }
}

#[derive(Debug, Clone)]
pub struct DemoSession {
    pub goal: String,
    pub agents: u32,
    pub max_rounds: u32,
    pub collaboration: bool,
    pub competition: bool,
    pub early_stop: bool,
    pub seed: u64,
}

pub fn summarize(t: &Transcript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "checks: {}", t.questions.iter().map(|q| q.text.as_str()).collect::<Vec<_>>().join(" | "));
    for r in &t.rounds {
        let calls: usize = r.agents.iter().map(|a| a.trace.steps.len()).sum();
        let _ = writeln!(
            out,
            "round {}: winner agent {} ({}/{} checks), {} tool calls{}",
            r.round,
            r.winner.agent_id,
            r.winner.feedback.satisfied_count,
            r.winner.feedback.total_checks,
            calls,
            if r.stop { ", stop" } else { "" }
        );
        for a in &r.agents {
            let plan: Vec<String> = a.plan.items().into_iter().map(|i| i.tool_name).collect();
            let _ = writeln!(out, "  agent {}: {}", a.agent_id, plan.join(" -> "));
        }
    }
    out
}

/// A whole session judged by the property oracle, planned by the rule
/// planner. Everything stays in memory.
pub fn run_demo(img: Raster, s: &DemoSession) -> Result<(Raster, Transcript), String> {
    let registry = Registry::shipped().builtins_only();
    let session = Session {
        config: SessionConfig {
            num_agents: s.agents,
            max_rounds: s.max_rounds,
            collaboration: s.collaboration,
            competition: s.competition,
            early_stop: s.early_stop,
            seed: s.seed,
            ..Default::default()
        },
        registry: &registry,
        backend: Arc::new(RuleBackend::new(RuleConfig { seed: s.seed, ..Default::default() })),
        adapters: AdapterPool::new(),
        evaluator: Evaluator {
            vqa: Arc::new(PropertyOracle::new(Arc::new(img.clone()))),
            aesthetic: None,
            captioner: None,
        },
        routing: Default::default(),
    };
    let request = UserRequest { goal: s.goal.clone(), caption: Some("a picture".into()) };
    let res = session.run(img, request).map_err(|f| f.error.to_string())?;
    Ok(((*res.final_image).clone(), res.transcript))
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn sample_png(seed: u32) -> Result<Vec<u8>, JsError> {
    encode(&sample(seed as u64)).map_err(js)
}

/// JSON array of example requests.
#[wasm_bindgen]
pub fn example_goals(seed: u32) -> String {
    serde_json::to_string(&goals(seed as u64, 6)).expect("strings serialize")
}

#[wasm_bindgen]
pub fn apply_calls(png: &[u8], lines: &str) -> Result<Outcome, JsError> {
    let (img, log) = apply_lines(decode(png).map_err(js)?, lines).map_err(js)?;
    Ok(Outcome { png: encode(&img).map_err(js)?, report: log.join("\n") })
}

/// JSON `{ok, steps: [[goal, tool]...], error}`.
#[wasm_bindgen]
pub fn check_plan(text: &str) -> String {
    serde_json::to_string(&check_plan_text(text)).expect("check serializes")
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn run_session(
    png: &[u8],
    goal: &str,
    agents: u32,
    max_rounds: u32,
    collaboration: bool,
    competition: bool,
    early_stop: bool,
    seed: u32,
) -> Result<Outcome, JsError> {
    let img = decode(png).map_err(js)?;
    let s = DemoSession {
        goal: goal.to_string(),
        agents,
        max_rounds,
        collaboration,
        competition,
        early_stop,
        seed: seed as u64,
    };
    let (out, t) = run_demo(img, &s).map_err(js)?;
    Ok(Outcome { png: encode(&out).map_err(js)?, report: summarize(&t) })
}
