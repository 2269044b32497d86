//! Generator agents: planning, reflection and step-by-step execution.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::adapter::{invoke_external, AdapterPool, AdapterRequest};
use crate::artifact::{ArtifactId, ArtifactStore, Payload};
use crate::discriminator::{FeedbackReport, Suggestion, SubtaskFeedback};
use crate::llm::parse::{parse_plan, parse_reflection, parse_tool_call, PlanParseError, Reflection, ToolCallLine, Verdict};
use crate::llm::template::{render_template, Vars, EMPTY_SENTINEL};
use crate::llm::{AskError, CallOrigin, Gateway, LlmCall, LlmError, TemplateId};
use crate::plan::{ExecutionTrace, Plan, Provenance, StepRecord, SubtaskStatus};
use crate::raster::Raster;
use crate::registry::{normalize_name, strength_params, ArgKind, ArgValue, BoundArgs, Registry, ToolError, ToolKind, ToolSpec};

/// Folder the prompts use for images.
pub const IMAGE_DIR: &str = "image";

/// Path by which prompts refer to an artifact.
pub fn display_path(id: &ArtifactId) -> String {
    format!("{IMAGE_DIR}/{}.png", id.0)
}

/// Inverse of [`display_path`].
pub fn artifact_from_display(path: &str) -> Option<ArtifactId> {
    let rest = path.trim().strip_prefix(IMAGE_DIR)?.strip_prefix('/')?;
    let stem = rest.strip_suffix(".png").or_else(|| rest.strip_suffix(".txt"))?;
    Some(ArtifactId(stem.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRequest {
    pub goal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("plan could not be parsed after re-prompt: {error}")]
    Plan { error: PlanParseError, calls: Vec<LlmCall> },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("tool registry: {0}")]
    Registry(String),
}

/// Everything an agent reads but does not own.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub registry: &'a Registry,
    pub gateway: &'a Gateway,
    pub store: &'a ArtifactStore,
    pub adapters: &'a AdapterPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub subtask: u32,
    pub millis: f64,
}

/// What an agent remembers about one subtask between rounds.
#[derive(Debug, Clone, PartialEq, Default)]
struct PriorStep {
    raw_args: Vec<String>,
    bound: BoundArgs,
    call: Option<String>,
    feedback: Option<SubtaskFeedback>,
}

/// One generator agent. Its state is private: peers only ever see plans and
/// feedback reports handed over by the orchestrator.
#[derive(Debug)]
pub struct Generator {
    pub agent_id: u32,
    plan: Option<Plan>,
    report: Option<FeedbackReport>,
    priors: HashMap<(String, String), PriorStep>,
}

fn prior_key(goal: &str, tool: &str) -> (String, String) {
    (goal.trim().to_lowercase(), normalize_name(tool))
}

pub struct PlanOutcome {
    pub plan: Plan,
    pub calls: Vec<LlmCall>,
    /// Set when planning failed and the previous plan was carried instead.
    pub error: Option<String>,
}

pub struct ExecOutcome {
    pub trace: ExecutionTrace,
    pub calls: Vec<LlmCall>,
    pub timings: Vec<StepTiming>,
    /// A backend failure (network, replay miss) that stopped execution.
    pub fatal: Option<LlmError>,
}

impl Generator {
    pub fn new(agent_id: u32) -> Self {
        Self {
            agent_id,
            plan: None,
            report: None,
            priors: HashMap::new(),
        }
    }

    pub fn current_plan(&self) -> Option<&Plan> {
        self.plan.as_ref()
    }

    pub fn last_report(&self) -> Option<&FeedbackReport> {
        self.report.as_ref()
    }

    fn planner_vars(&self, ctx: &AgentContext, req: &UserRequest) -> Result<Vars, GeneratorError> {
        let view = ctx.registry.planner_view().map_err(|e| GeneratorError::Registry(e.to_string()))?;
        Ok([
            ("IMAGE_PATH", display_path(&ArtifactId::input())),
            ("EDITING_REQUEST", req.goal.clone()),
            ("TOOL_NAMES", view.tool_names()),
            ("TOOL_DESCRIPTIONS", view.tool_descriptions()),
        ]
        .into())
    }

    /// Initial plan in round 1, reflection afterwards. A failed reflection
    /// carries the previous plan forward; a failed initial plan is an error.
    pub fn plan(
        &mut self,
        ctx: &AgentContext,
        req: &UserRequest,
        round: u32,
        peer: Option<(&Plan, &FeedbackReport)>,
    ) -> Result<PlanOutcome, GeneratorError> {
        let origin = CallOrigin::agent(round, self.agent_id);
        let mut vars = self.planner_vars(ctx, req)?;
        let (prev, report) = match (&self.plan, &self.report) {
            (Some(p), Some(r)) if round > 1 => (p.clone(), r.clone()),
            _ => {
                let prompt = render_template(TemplateId::PlannerInitial, &vars)?;
                let asked = ctx
                    .gateway
                    .ask(TemplateId::PlannerInitial, &prompt, origin, |t| parse_plan(t, ctx.registry));
                let (items, calls) = match asked {
                    Ok(v) => v,
                    Err(AskError::Llm(e)) => return Err(e.into()),
                    Err(AskError::Format { error, calls }) => return Err(GeneratorError::Plan { error, calls }),
                };
                let plan = Plan::from_items(round, self.agent_id, &items, Provenance::Initial);
                self.plan = Some(plan.clone());
                return Ok(PlanOutcome { plan, calls, error: None });
            }
        };
        vars.insert("SUBTASKS", prev.render());
        vars.insert("FEEDBACK", report.render());
        if let Some((p, r)) = peer {
            vars.insert("PEER_PLAN", p.render());
            vars.insert("PEER_FEEDBACK", r.render());
        }
        let prompt = render_template(TemplateId::PlannerReflect, &vars)?;
        let asked = ctx
            .gateway
            .ask(TemplateId::PlannerReflect, &prompt, origin, |t| parse_reflection(t, ctx.registry));
        let from_round = prev.round;
        let outcome = match asked {
            Ok((Reflection::Revised(items), calls)) => PlanOutcome {
                plan: Plan::from_items(round, self.agent_id, &items, Provenance::Reflected { from_round }),
                calls,
                error: None,
            },
            Ok((Reflection::Keep, calls)) => PlanOutcome {
                plan: prev.carried(round, Provenance::Kept { from_round }),
                calls,
                error: None,
            },
            Err(AskError::Llm(e)) => return Err(e.into()),
            Err(AskError::Format { error, calls }) => PlanOutcome {
                plan: prev.carried(round, Provenance::Kept { from_round }),
                calls,
                error: Some(error.to_string()),
            },
        };
        self.plan = Some(outcome.plan.clone());
        Ok(outcome)
    }

    /// Runs the plan's subtasks in order. A failed step is recorded and the
    /// chain continues from the last good image.
    pub fn execute(&mut self, ctx: &AgentContext, plan: &mut Plan, round: u32) -> ExecOutcome {
        let mut current = ArtifactId::input();
        let mut steps = Vec::new();
        let mut calls = Vec::new();
        let mut timings = Vec::new();
        let mut fatal = None;
        for i in 0..plan.subtasks.len() {
            let started = Instant::now();
            let sub = plan.subtasks[i].clone();
            let (record, mut used, err) = self.run_step(ctx, round, sub.index, &sub.goal_text, &sub.tool_name, &current);
            calls.append(&mut used);
            timings.push(StepTiming {
                subtask: sub.index,
                millis: started.elapsed().as_secs_f64() * 1000.0,
            });
            plan.subtasks[i].bound_call = record.call.clone();
            plan.subtasks[i].status = if record.failed() { SubtaskStatus::Failed } else { SubtaskStatus::Done };
            if record.advanced() {
                current = record.output.clone().expect("advanced step has output");
            }
            steps.push(record);
            if err.is_some() {
                fatal = err;
                break;
            }
        }
        if let Some(p) = &mut self.plan {
            if p.round == plan.round {
                *p = plan.clone();
            }
        }
        ExecOutcome {
            trace: ExecutionTrace {
                round,
                agent_id: self.agent_id,
                steps,
                final_output: current,
            },
            calls,
            timings,
            fatal,
        }
    }

    fn run_step(
        &mut self,
        ctx: &AgentContext,
        round: u32,
        index: u32,
        goal: &str,
        tool: &str,
        current: &ArtifactId,
    ) -> (StepRecord, Vec<LlmCall>, Option<LlmError>) {
        let mut record = StepRecord {
            subtask: index,
            tool: tool.to_string(),
            call: None,
            input: current.clone(),
            output: None,
            observation: None,
            error: None,
            llm_args: false,
            adjustment: None,
        };
        let Some(spec) = ctx.registry.get(tool) else {
            record.error = Some(ToolError::UnknownTool(tool.to_string()).to_string());
            return (record, Vec::new(), None);
        };
        record.tool = spec.name.clone();
        let key = prior_key(goal, &spec.name);
        let prior = self.priors.get(&key).cloned();
        let image = display_path(current);
        let mut calls = Vec::new();

        let prior_ok = prior
            .as_ref()
            .is_some_and(|p| p.feedback.as_ref().is_some_and(|f| f.verdict == Verdict::Yes) && !p.raw_args.is_empty());
        let mut raw: Vec<String> = if spec.fully_determined() {
            spec.args.iter().map(|_| image.clone()).collect()
        } else if prior_ok {
            prior.as_ref().map(|p| p.raw_args.clone()).unwrap_or_default()
        } else {
            record.llm_args = true;
            let origin = CallOrigin::agent(round, self.agent_id);
            match ask_tool_call(ctx, spec, goal, &image, prior.as_ref(), origin) {
                Ok((line, mut used)) => {
                    calls.append(&mut used);
                    line.args
                }
                Err(AskFailure { message, calls: mut used, fatal }) => {
                    calls.append(&mut used);
                    record.error = Some(message);
                    return (record, calls, fatal);
                }
            }
        };
        if let Some(first) = spec.args.iter().position(|a| a.kind == ArgKind::Path) {
            if raw.len() <= first {
                raw.resize(first + 1, String::new());
            }
            raw[first] = image.clone();
        }
        let mut bound = match spec.bind(&raw) {
            Ok(b) => b,
            Err(e) => {
                record.error = Some(e.to_string());
                return (record, calls, None);
            }
        };
        if let Some(p) = &prior {
            let retune = p.feedback.as_ref().is_some_and(|f| {
                f.verdict == Verdict::No && !matches!(f.suggestion, Suggestion::ChangeTool { .. } | Suggestion::ChangeGoal)
            });
            if retune {
                let (adjusted, notes) = adjust_params(spec, &p.bound, bound);
                bound = adjusted;
                if !notes.is_empty() {
                    record.adjustment = Some(notes.join("; "));
                }
            }
        }
        let line = ToolCallLine::new(spec.name.clone(), bound.iter().map(|(_, v)| v.render()).collect());
        record.call = Some(line.render());
        self.priors.insert(
            key,
            PriorStep {
                raw_args: bound.iter().map(|(_, v)| v.render()).collect(),
                bound: bound.clone(),
                call: record.call.clone(),
                feedback: prior.and_then(|p| p.feedback),
            },
        );

        let out_id = ArtifactId::step(round, self.agent_id, index);
        let result = invoke(ctx, spec, &bound, current, &out_id);
        match result.and_then(|payload| {
            ctx.store
                .put(out_id.clone(), payload.clone(), record.call.clone().unwrap_or_default())
                .map(|_| payload)
                .map_err(|e| e.to_string())
        }) {
            Ok(payload) => {
                record.output = Some(out_id);
                match payload {
                    Payload::Raster(_) => {}
                    Payload::Scalar(v) => record.observation = Some(v.to_string()),
                    Payload::Text(t) => record.observation = Some(t),
                }
            }
            Err(e) => record.error = Some(e),
        }
        (record, calls, None)
    }

    /// Takes in the round's result so the next round can reflect on it.
    pub fn absorb(&mut self, report: &FeedbackReport, plan: &Plan, per_subtask: &[SubtaskFeedback]) {
        self.report = Some(report.clone());
        for s in &plan.subtasks {
            let key = prior_key(&s.goal_text, &s.tool_name);
            if let Some(p) = self.priors.get_mut(&key) {
                p.feedback = per_subtask.iter().find(|f| f.index == s.index).cloned();
            }
        }
    }
}

struct AskFailure {
    message: String,
    calls: Vec<LlmCall>,
    fatal: Option<LlmError>,
}

fn ask_tool_call(
    ctx: &AgentContext,
    spec: &ToolSpec,
    goal: &str,
    image: &str,
    prior: Option<&PriorStep>,
    origin: CallOrigin,
) -> Result<(ToolCallLine, Vec<LlmCall>), AskFailure> {
    let previous = prior.and_then(|p| p.call.clone()).unwrap_or_else(|| EMPTY_SENTINEL.to_string());
    let feedback = prior
        .and_then(|p| p.feedback.as_ref())
        .map(|f| format!("{}: {}", f.verdict, f.note))
        .unwrap_or_else(|| EMPTY_SENTINEL.to_string());
    let vars: Vars = [
        ("TOOL_NAME", spec.name.clone()),
        ("SUBTASK", goal.to_string()),
        ("IMAGE_PATH", image.to_string()),
        ("MANUAL", spec.manual.trim().to_string()),
        ("PREVIOUS_CALL", previous),
        ("FEEDBACK", feedback),
    ]
    .into();
    let prompt = render_template(TemplateId::ExecutorToolcall, &vars).map_err(|e| AskFailure {
        message: e.to_string(),
        calls: Vec::new(),
        fatal: None,
    })?;
    let parse = |text: &str| -> Result<ToolCallLine, String> {
        let line = parse_tool_call(text).map_err(|e| e.to_string())?;
        if normalize_name(&line.tool) != normalize_name(&spec.name) {
            return Err(format!("expected a call to `{}`, got `{}`", spec.name, line.tool));
        }
        let mut probe = line.args.clone();
        if let Some(first) = spec.args.iter().position(|a| a.kind == ArgKind::Path) {
            if probe.len() <= first {
                probe.resize(first + 1, String::new());
            }
            probe[first] = image.to_string();
        }
        spec.bind(&probe).map_err(|e| e.to_string())?;
        Ok(line)
    };
    match ctx.gateway.ask(TemplateId::ExecutorToolcall, &prompt, origin, parse) {
        Ok(v) => Ok(v),
        Err(AskError::Llm(e)) => Err(AskFailure {
            message: e.to_string(),
            calls: Vec::new(),
            fatal: Some(e),
        }),
        Err(AskError::Format { error, calls }) => Err(AskFailure {
            message: format!("format: {error}"),
            calls,
            fatal: None,
        }),
    }
}

/// Escalates strength-like parameters after negative feedback: a proposal
/// above the previous value is taken as is, otherwise the value steps up by
/// the manual's increment. Both are capped at the manual's maximum.
pub fn adjust_params(spec: &ToolSpec, previous: &BoundArgs, proposed: BoundArgs) -> (BoundArgs, Vec<String>) {
    let mut out = proposed;
    let mut notes = Vec::new();
    for sp in strength_params(&spec.manual) {
        let Some(prev) = previous.iter().find(|(n, _)| *n == sp.arg).and_then(|(_, v)| v.as_real()) else {
            continue;
        };
        let Some(slot) = out.iter_mut().find(|(n, _)| *n == sp.arg) else {
            continue;
        };
        let Some(prop) = slot.1.as_real() else {
            continue;
        };
        let wanted = if prop > prev { prop } else { prev + sp.step };
        let next = wanted.min(sp.max);
        if next <= prev {
            notes.push(format!("{} held at {}", sp.arg, crate::registry::format_real(prev)));
            slot.1 = ArgValue::Real(prev);
        } else {
            notes.push(format!(
                "{} {} -> {}",
                sp.arg,
                crate::registry::format_real(prev),
                crate::registry::format_real(next)
            ));
            slot.1 = ArgValue::Real(next);
        }
    }
    (out, notes)
}

/// Payload for a path argument other than the chained image.
fn resolve_path_arg(ctx: &AgentContext, tool: &str, value: &str) -> Result<Payload, String> {
    if let Some(id) = artifact_from_display(value) {
        if let Some(p) = ctx.store.payload(&id) {
            return Ok(p);
        }
    }
    ctx.store.resolve_asset(tool, value).map_err(|e| e.to_string())
}

fn invoke(
    ctx: &AgentContext,
    spec: &ToolSpec,
    bound: &BoundArgs,
    current: &ArtifactId,
    out_id: &ArtifactId,
) -> Result<Payload, String> {
    let first_path = spec.args.iter().position(|a| a.kind == ArgKind::Path);
    let mut inputs = Vec::new();
    for (i, a) in spec.args.iter().enumerate() {
        if a.kind != ArgKind::Path {
            continue;
        }
        let Some((_, value)) = bound.iter().find(|(n, _)| *n == a.name) else {
            continue;
        };
        let payload = if Some(i) == first_path {
            ctx.store
                .payload(current)
                .ok_or_else(|| format!("artifact `{current}` is missing"))?
        } else {
            resolve_path_arg(ctx, &spec.name, value.as_str().unwrap_or_default())?
        };
        inputs.push(payload);
    }
    match &spec.kind {
        ToolKind::Builtin => {
            let refs: Vec<&Payload> = inputs.iter().collect();
            ctx.registry.invoke_builtin(&spec.name, bound, &refs).map_err(|e| e.to_string())
        }
        ToolKind::External { endpoint } => {
            let transport = ctx
                .adapters
                .get(endpoint)
                .ok_or_else(|| format!("no adapter configured for endpoint `{endpoint}`"))?;
            let mut req = AdapterRequest::new(out_id.0.replace('/', "-"), spec.name.clone());
            for (i, input) in inputs.iter().enumerate() {
                let path = materialize(ctx, input, out_id, i)?;
                req = req.input(path.to_string_lossy());
            }
            for (name, v) in bound {
                if spec.args.iter().any(|a| a.name == *name && a.kind != ArgKind::Path) {
                    req = req.arg(name, v.to_json());
                }
            }
            let resp = invoke_external(transport.as_ref(), &req, ctx.adapters.timeout()).map_err(|e| e.to_string())?;
            import_output(Path::new(resp.output_path.as_deref().unwrap_or_default()))
        }
    }
}

/// Adapters read from disk, so every input needs a file.
fn materialize(ctx: &AgentContext, payload: &Payload, out_id: &ArtifactId, i: usize) -> Result<std::path::PathBuf, String> {
    let root = ctx
        .store
        .root()
        .ok_or("external tools need a session directory on disk")?;
    let dir = root.join("adapter-inputs");
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(format!("{}-{i}.{}", out_id.0.replace('/', "-"), payload.extension()));
    let bytes = payload.encode().map_err(|e| e.to_string())?;
    std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn import_output(path: &Path) -> Result<Payload, String> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => Raster::load(path).map(Payload::raster).map_err(|e| e.to_string()),
        Some("txt") => std::fs::read_to_string(path)
            .map(|t| Payload::Text(t.trim_end().to_string()))
            .map_err(|e| format!("{}: {e}", path.display())),
        _ => Err(format!("adapter output `{}` is neither .png nor .txt", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FnBackend, ScriptedBackend};
    use std::sync::Arc;

    fn ctx_parts(backend: Arc<dyn crate::llm::ChatBackend>) -> (Registry, Gateway, ArtifactStore, AdapterPool) {
        let store = ArtifactStore::in_memory();
        let img = Raster::filled(64, 48, &[10, 120, 200]).unwrap();
        store.put(ArtifactId::input(), Payload::raster(img), "input").unwrap();
        (Registry::shipped(), Gateway::new(backend), store, AdapterPool::new())
    }

    #[test]
    fn display_paths_round_trip() {
        let id = ArtifactId::step(2, 1, 3);
        assert_eq!(display_path(&id), "image/m2/a1/s3.png");
        assert_eq!(artifact_from_display(&display_path(&id)), Some(id));
        assert_eq!(artifact_from_display("image/input.png"), Some(ArtifactId::input()));
        assert_eq!(artifact_from_display("elsewhere/x.png"), None);
    }

    #[test]
    fn plan_and_execute_builtins() {
        let backend = ScriptedBackend::new()
            .push(TemplateId::PlannerInitial, "1. Resize the image to 32 pixels using Resize; 2. Convert to gray using RGB2Gray; 3. Get the size using GetSize")
            .push(TemplateId::ExecutorToolcall, "Resize @@ image/input.png <-> 32");
        let (reg, gw, store, pool) = ctx_parts(Arc::new(backend));
        let ctx = AgentContext { registry: &reg, gateway: &gw, store: &store, adapters: &pool };
        let req = UserRequest { goal: "small gray".into(), caption: None };
        let mut g = Generator::new(1);
        let mut plan = g.plan(&ctx, &req, 1, None).unwrap().plan;
        assert_eq!(plan.subtasks.len(), 3);
        let out = g.execute(&ctx, &mut plan, 1);
        out.trace.check_chain().unwrap();
        // only Resize needed the language model
        assert_eq!(out.calls.len(), 1);
        assert_eq!(out.trace.final_output, ArtifactId::step(1, 1, 2));
        assert_eq!(out.trace.steps[2].observation.as_deref(), Some("32x24"));
        let r = store.payload(&out.trace.final_output).unwrap();
        assert!(r.as_raster().unwrap().is_grayscale());
        assert_eq!(plan.subtasks[0].bound_call.as_deref(), Some("Resize @@ image/input.png <-> 32"));
    }

    #[test]
    fn failed_step_keeps_chain() {
        let backend = ScriptedBackend::new()
            .push(TemplateId::PlannerInitial, "1. Crop using Crop\n2. Flip it using FlipHorizontal")
            .push(TemplateId::ExecutorToolcall, "Crop @@ image/input.png <-> 500,500,10,10");
        let (reg, gw, store, pool) = ctx_parts(Arc::new(backend));
        let ctx = AgentContext { registry: &reg, gateway: &gw, store: &store, adapters: &pool };
        let mut g = Generator::new(2);
        let mut plan = g.plan(&ctx, &UserRequest { goal: "x".into(), caption: None }, 1, None).unwrap().plan;
        let out = g.execute(&ctx, &mut plan, 1);
        assert!(out.trace.steps[0].failed());
        assert_eq!(out.trace.steps[1].input, ArtifactId::input());
        assert_eq!(plan.subtasks[0].status, SubtaskStatus::Failed);
        out.trace.check_chain().unwrap();
    }

    #[test]
    fn external_tool_without_adapter_is_a_step_error() {
        let backend = ScriptedBackend::new()
            .push(TemplateId::PlannerInitial, "1. Add a hat using InstructDiffusion")
            .push(TemplateId::ExecutorToolcall, "InstructDiffusion @@ image/input.png <-> add a hat <-> 4.0");
        let (reg, gw, store, pool) = ctx_parts(Arc::new(backend));
        let ctx = AgentContext { registry: &reg, gateway: &gw, store: &store, adapters: &pool };
        let mut g = Generator::new(1);
        let mut plan = g.plan(&ctx, &UserRequest { goal: "hat".into(), caption: None }, 1, None).unwrap().plan;
        let out = g.execute(&ctx, &mut plan, 1);
        assert!(out.trace.steps[0].error.as_deref().unwrap().contains("diffusion"));
    }

    #[test]
    fn wrong_tool_in_call_is_reprompted_then_fails() {
        let backend = FnBackend::new("t", |r: &crate::llm::LlmRequest| match r.template {
            TemplateId::PlannerInitial => Ok("1. Resize using Resize".to_string()),
            _ => Ok("Crop @@ image/input.png <-> 1,1,2,2".to_string()),
        });
        let (reg, gw, store, pool) = ctx_parts(Arc::new(backend));
        let ctx = AgentContext { registry: &reg, gateway: &gw, store: &store, adapters: &pool };
        let mut g = Generator::new(1);
        let mut plan = g.plan(&ctx, &UserRequest { goal: "x".into(), caption: None }, 1, None).unwrap().plan;
        let out = g.execute(&ctx, &mut plan, 1);
        assert_eq!(out.calls.len(), 2);
        assert!(out.trace.steps[0].error.as_deref().unwrap().starts_with("format"));
    }

    #[test]
    fn escalation_shape() {
        let reg = Registry::shipped();
        let spec = reg.get("InstructDiffusion").unwrap();
        let mk = |cfg: f64| spec.bind(&["a.png".into(), "add a hat".into(), crate::registry::format_real(cfg)]).unwrap();
        let cfg = |b: &BoundArgs| b[2].1.as_real().unwrap();
        // proposals echo the previous value, then jump, then fall back
        let mut prev = mk(4.0);
        let mut seen = vec![cfg(&prev)];
        for proposal in [4.0, 5.0, 8.0, 6.0] {
            let (next, _) = adjust_params(spec, &prev, mk(proposal));
            seen.push(cfg(&next));
            prev = next;
        }
        assert_eq!(seen, vec![4.0, 5.0, 6.0, 8.0, 8.0]);
    }
}
