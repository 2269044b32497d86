//! The session loop. Each round every agent plans and executes in parallel;
//! evaluation, competition, memory and the stop check then run in agent
//! order at the round barrier, so transcripts do not depend on scheduling.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use web_time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::AdapterPool;
use crate::artifact::{Artifact, ArtifactId, ArtifactStore, Payload};
use crate::discriminator::{
    answer_questions, compete, compile_feedback, decompose_feedback, decompose_with_llm, generate_questions,
    should_stop, AestheticScorer, Candidate, DiscriminatorError, FeedbackReport, ImageRef, MemoryBank, Question,
    QualityScore, SubtaskFeedback, Vqa, ALTERNATIVE_TOOL_ADVICE,
};
use crate::generator::{AgentContext, Generator, GeneratorError, StepTiming, UserRequest};
use crate::llm::{CallOrigin, ChatBackend, Gateway, LlmCall, LlmError, ModelRouting, ReplayRecord, ReplayStore};
use crate::plan::{ExecutionTrace, Plan, Provenance};
use crate::raster::Raster;
use crate::registry::Registry;

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_AGENTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub max_rounds: u32,
    pub num_agents: u32,
    pub collaboration: bool,
    pub competition: bool,
    pub early_stop: bool,
    pub seed: u64,
    /// Ask the language model to split feedback per subtask instead of
    /// matching keywords.
    pub llm_decompose: bool,
    pub adapter_timeout_ms: u64,
    /// Session directory; kept out of transcripts.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            num_agents: 2,
            collaboration: true,
            competition: true,
            early_stop: true,
            seed: 0,
            llm_decompose: false,
            adapter_timeout_ms: 60_000,
            output_dir: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds == 0 {
            return Err("max_rounds must be at least 1".into());
        }
        if self.num_agents == 0 || self.num_agents > MAX_AGENTS {
            return Err(format!("num_agents must be in 1..={MAX_AGENTS}"));
        }
        if self.adapter_timeout_ms == 0 {
            return Err("adapter_timeout_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the editing request is empty")]
    EmptyGoal,
    #[error("question generation failed: {0}")]
    Questions(String),
    #[error("backend unavailable: {0}")]
    Llm(LlmError),
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Plan,
    Execute,
    Feedback,
    Decompose,
    Compete,
    Memory,
    StopCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: u32,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRound {
    pub agent_id: u32,
    pub plan: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_error: Option<String>,
    pub trace: ExecutionTrace,
    pub feedback: FeedbackReport,
    pub subtask_feedback: Vec<SubtaskFeedback>,
    pub score: QualityScore,
    /// Agent whose plan and feedback were shown during reflection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub agents: Vec<AgentRound>,
    pub winner: Candidate,
    pub from_memory: bool,
    pub full_tie: bool,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub origin: CallOrigin,
    #[serde(flatten)]
    pub call: LlmCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub schema_version: u32,
    pub config: SessionConfig,
    pub backend: String,
    /// Name of the question answerer that judged the candidates.
    pub evaluator: String,
    pub request: UserRequest,
    pub caption: String,
    pub input_digest: String,
    pub questions: Vec<Question>,
    pub rounds: Vec<RoundRecord>,
    pub events: Vec<Event>,
    pub memory: MemoryBank,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_artifact: Option<ArtifactId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_digest: Option<String>,
    pub artifacts: Vec<Artifact>,
    pub llm_calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    pub fn from_json(text: &str) -> Result<Transcript, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(format!("unsupported schema_version {v}")),
            None => return Err("missing schema_version".into()),
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Transcript, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn rounds_used(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn stopped_early(&self) -> bool {
        self.rounds.last().is_some_and(|r| r.stop)
    }

    pub fn digest_of(&self, id: &ArtifactId) -> Option<&str> {
        self.artifacts.iter().find(|a| &a.id == id).map(|a| a.digest.as_str())
    }

    /// `llm.jsonl` records in call order.
    pub fn replay_records(&self) -> Vec<ReplayRecord> {
        self.llm_calls
            .iter()
            .map(|c| ReplayRecord {
                key: c.call.key.clone(),
                template: c.call.template.to_string(),
                response: c.call.response.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTimings {
    pub agent_id: u32,
    pub plan_ms: f64,
    pub steps: Vec<StepTiming>,
    pub eval_ms: f64,
}

/// Wall-clock figures, written beside the transcript so the transcript
/// itself stays reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub rounds: Vec<Vec<AgentTimings>>,
}

/// How candidate images are judged.
#[derive(Clone)]
pub struct Evaluator {
    pub vqa: Arc<dyn Vqa>,
    pub aesthetic: Option<Arc<dyn AestheticScorer>>,
    /// Describes the input when the request carries no caption.
    pub captioner: Option<Arc<dyn Vqa>>,
}

pub struct Session<'a> {
    pub config: SessionConfig,
    pub registry: &'a Registry,
    pub backend: Arc<dyn ChatBackend>,
    pub adapters: AdapterPool,
    pub evaluator: Evaluator,
    pub routing: ModelRouting,
}

#[derive(Debug)]
pub struct SessionResult {
    pub transcript: Transcript,
    pub timings: Timings,
    pub final_image: Arc<Raster>,
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct SessionFailure {
    pub error: SessionError,
    /// Whatever was recorded before the failure, when anything was.
    pub transcript: Option<Box<Transcript>>,
}

impl From<SessionError> for SessionFailure {
    fn from(error: SessionError) -> Self {
        Self { error, transcript: None }
    }
}

pub const CAPTION_QUESTION: &str = "Describe the image in one sentence.";

struct AgentWork {
    plan: Plan,
    plan_error: Option<String>,
    trace: ExecutionTrace,
    calls: Vec<LlmCall>,
    timings: AgentTimings,
    fatal: Option<LlmError>,
}

fn empty_work(round: u32, agent_id: u32, why: String, fatal: Option<LlmError>, calls: Vec<LlmCall>) -> AgentWork {
    AgentWork {
        plan: Plan {
            round,
            agent_id,
            subtasks: Vec::new(),
            provenance: Provenance::Initial,
        },
        plan_error: Some(why),
        trace: ExecutionTrace {
            round,
            agent_id,
            steps: Vec::new(),
            final_output: ArtifactId::input(),
        },
        calls,
        timings: AgentTimings {
            agent_id,
            ..Default::default()
        },
        fatal,
    }
}

fn agent_round(
    g: &mut Generator,
    ctx: &AgentContext,
    req: &UserRequest,
    round: u32,
    peer: Option<(&Plan, &FeedbackReport)>,
) -> AgentWork {
    let started = Instant::now();
    let outcome = match g.plan(ctx, req, round, peer) {
        Ok(o) => o,
        Err(GeneratorError::Llm(e)) => return empty_work(round, g.agent_id, e.to_string(), Some(e), Vec::new()),
        Err(GeneratorError::Plan { error, calls }) => {
            return empty_work(round, g.agent_id, error.to_string(), None, calls)
        }
        Err(e) => return empty_work(round, g.agent_id, e.to_string(), None, Vec::new()),
    };
    let plan_ms = started.elapsed().as_secs_f64() * 1000.0;
    let mut plan = outcome.plan;
    let mut calls = outcome.calls;
    let exec = g.execute(ctx, &mut plan, round);
    calls.extend(exec.calls);
    let fatal = exec.fatal;
    AgentWork {
        plan,
        plan_error: outcome.error,
        trace: exec.trace,
        calls,
        timings: AgentTimings {
            agent_id: g.agent_id,
            plan_ms,
            steps: exec.timings,
            eval_ms: 0.0,
        },
        fatal,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

struct Recorder {
    calls: Vec<CallRecord>,
}

impl Recorder {
    fn add(&mut self, origin: CallOrigin, calls: impl IntoIterator<Item = LlmCall>) {
        self.calls.extend(calls.into_iter().map(|call| CallRecord { origin, call }));
    }
}

impl Session<'_> {
    pub fn run(&self, input: Raster, request: UserRequest) -> Result<SessionResult, SessionFailure> {
        let started = Instant::now();
        let cfg = &self.config;
        cfg.validate().map_err(SessionError::Config)?;
        if request.goal.trim().is_empty() {
            return Err(SessionError::EmptyGoal.into());
        }
        let store = match &cfg.output_dir {
            Some(dir) => ArtifactStore::on_disk(dir),
            None => ArtifactStore::in_memory(),
        };
        let input_art = store
            .put(ArtifactId::input(), Payload::raster(input), "input")
            .map_err(|e| SessionError::Io(e.to_string()))?;
        let input_payload = store.payload(&ArtifactId::input()).expect("input stored");
        let mut gateway = Gateway::new(self.backend.clone());
        gateway.seed = Some(cfg.seed);
        gateway.routing = self.routing.clone();
        let mut adapters = self.adapters.clone();
        adapters.timeout = Some(Duration::from_millis(cfg.adapter_timeout_ms));
        let ctx = AgentContext {
            registry: self.registry,
            gateway: &gateway,
            store: &store,
            adapters: &adapters,
        };

        let caption = request.caption.clone().unwrap_or_else(|| {
            let raster = input_payload.as_raster().expect("input is a raster");
            let path = store.file_path(&input_art).ok();
            self.evaluator
                .captioner
                .as_ref()
                .and_then(|c| {
                    c.answer(ImageRef { raster, path: path.as_deref() }, CAPTION_QUESTION)
                        .ok()
                })
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .unwrap_or_else(|| "an image".to_string())
        });

        let mut transcript = Transcript {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            backend: self.backend.name(),
            evaluator: self.evaluator.vqa.name(),
            request: request.clone(),
            caption: caption.clone(),
            input_digest: input_art.digest.clone(),
            questions: Vec::new(),
            rounds: Vec::new(),
            events: Vec::new(),
            memory: MemoryBank::default(),
            final_artifact: None,
            final_digest: None,
            artifacts: Vec::new(),
            llm_calls: Vec::new(),
            error: None,
        };
        let mut rec = Recorder { calls: Vec::new() };
        let mut timings = Timings::default();

        let fail = |mut t: Transcript, rec: Recorder, error: SessionError, store: &ArtifactStore| {
            t.error = Some(error.to_string());
            t.llm_calls = rec.calls;
            t.artifacts = store.artifacts();
            if let Some(dir) = &cfg.output_dir {
                let _ = persist(dir, &t, None);
            }
            SessionFailure {
                error,
                transcript: Some(Box::new(t)),
            }
        };

        let judge0 = CallOrigin::judge(0);
        match generate_questions(&gateway, &caption, &request.goal, judge0) {
            Ok((qs, calls)) => {
                rec.add(judge0, calls);
                transcript.questions = qs;
            }
            Err(DiscriminatorError::EmptyGoal) => return Err(SessionError::EmptyGoal.into()),
            Err(DiscriminatorError::Llm(e)) => return Err(fail(transcript, rec, SessionError::Llm(e), &store)),
            Err(DiscriminatorError::QuestionParseFailure { calls }) => {
                rec.add(judge0, calls);
                let e = SessionError::Questions("no Yes/No questions in the completion".into());
                return Err(fail(transcript, rec, e, &store));
            }
        }

        let mut gens: Vec<Generator> = (1..=cfg.num_agents).map(Generator::new).collect();
        let mut memory = MemoryBank::default();
        let mut previous: Option<RoundRecord> = None;

        for round in 1..=cfg.max_rounds {
            // peer for reflection: the best other agent of the previous round
            let peers: Vec<Option<(Plan, FeedbackReport, u32)>> = (1..=cfg.num_agents)
                .map(|a| {
                    let prev = previous.as_ref()?;
                    if !cfg.collaboration || cfg.num_agents < 2 {
                        return None;
                    }
                    prev.agents
                        .iter()
                        .filter(|o| o.agent_id != a)
                        .max_by(|x, y| x.score.cmp_total(&y.score))
                        .map(|o| (o.plan.clone(), o.feedback.clone(), o.agent_id))
                })
                .collect();

            #[cfg(not(target_arch = "wasm32"))]
            let works: Vec<AgentWork> = std::thread::scope(|s| {
                let handles: Vec<_> = gens
                    .iter_mut()
                    .zip(&peers)
                    .map(|(g, peer)| {
                        let ctx = ctx;
                        let request = &request;
                        s.spawn(move || {
                            let peer = peer.as_ref().map(|(p, r, _)| (p, r));
                            agent_round(g, &ctx, request, round, peer)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .enumerate()
                    .map(|(i, h)| {
                        h.join().unwrap_or_else(|_| {
                            empty_work(round, i as u32 + 1, "agent panicked".into(), None, Vec::new())
                        })
                    })
                    .collect()
            });
            // no threads in the browser; agents take turns
            #[cfg(target_arch = "wasm32")]
            let works: Vec<AgentWork> = gens
                .iter_mut()
                .zip(&peers)
                .map(|(g, peer)| agent_round(g, &ctx, &request, round, peer.as_ref().map(|(p, r, _)| (p, r))))
                .collect();

            for w in &works {
                rec.add(CallOrigin::agent(round, w.plan.agent_id), w.calls.iter().cloned());
            }
            if let Some(e) = works.iter().find_map(|w| w.fatal.clone()) {
                transcript.memory = memory;
                return Err(fail(transcript, rec, SessionError::Llm(e), &store));
            }

            // nothing to fall back on: every agent failed every subtask
            if memory.entries.is_empty() && works.iter().all(|w| w.trace.steps.iter().all(|s| s.failed())) {
                let e = SessionError::Aborted(format!("every agent failed every subtask in round {round}"));
                transcript.memory = memory;
                return Err(fail(transcript, rec, e, &store));
            }

            let mut round_timings = Vec::new();
            let mut agents = Vec::new();
            for w in works {
                let eval_started = Instant::now();
                let (art, payload) = store.get(&w.trace.final_output).expect("chain ends at a stored artifact");
                let raster = payload.as_raster().expect("chain only advances on rasters").clone();
                let path = store.file_path(&art).ok();
                let img = ImageRef { raster: &raster, path: path.as_deref() };
                let answers = answer_questions(self.evaluator.vqa.as_ref(), img, &transcript.questions);
                let aesthetic = self.evaluator.aesthetic.as_ref().and_then(|a| a.score(img).ok());
                let feedback = compile_feedback(answers, aesthetic);
                let subtask_feedback = if cfg.llm_decompose && !w.plan.subtasks.is_empty() {
                    let origin = CallOrigin::agent(round, w.plan.agent_id);
                    let (fb, calls) = decompose_with_llm(&gateway, &feedback, &w.plan, origin);
                    rec.add(origin, calls);
                    fb
                } else {
                    decompose_feedback(&feedback, &w.plan)
                };
                let score = QualityScore::of(&feedback, round, w.plan.agent_id);
                let mut t = w.timings;
                t.eval_ms = eval_started.elapsed().as_secs_f64() * 1000.0;
                round_timings.push(t);
                let peer = peers[w.plan.agent_id as usize - 1].as_ref().map(|p| p.2);
                agents.push(AgentRound {
                    agent_id: w.plan.agent_id,
                    plan: w.plan,
                    plan_error: w.plan_error,
                    trace: w.trace,
                    feedback,
                    subtask_feedback,
                    score,
                    peer,
                });
            }
            timings.rounds.push(round_timings);

            let candidates: Vec<Candidate> = agents
                .iter()
                .map(|a| Candidate {
                    round,
                    agent_id: a.agent_id,
                    artifact: a.trace.final_output.clone(),
                    digest: store.get(&a.trace.final_output).map(|(x, _)| x.digest).unwrap_or_default(),
                    feedback: a.feedback.clone(),
                })
                .collect();
            let outcome = if cfg.competition {
                compete(&candidates, &memory).expect("at least one candidate")
            } else {
                crate::discriminator::CompeteOutcome {
                    winner: candidates[0].clone(),
                    from_memory: false,
                    full_tie: false,
                }
            };
            if outcome.full_tie {
                for a in &mut agents {
                    if a.feedback.satisfied_count < a.feedback.total_checks {
                        a.feedback.advice = Some(ALTERNATIVE_TOOL_ADVICE.to_string());
                    }
                }
            }
            memory.update(round, outcome.winner.clone());
            for (g, a) in gens.iter_mut().zip(&agents) {
                g.absorb(&a.feedback, &a.plan, &a.subtask_feedback);
            }
            let stop = cfg.early_stop && should_stop(&outcome.winner.feedback);

            let n = cfg.num_agents;
            for phase in [Phase::Plan, Phase::Execute, Phase::Feedback, Phase::Decompose] {
                for a in 1..=n {
                    transcript.events.push(Event { round, phase, agent: Some(a) });
                }
            }
            for phase in [Phase::Compete, Phase::Memory, Phase::StopCheck] {
                transcript.events.push(Event { round, phase, agent: None });
            }
            let record = RoundRecord {
                round,
                agents,
                winner: outcome.winner,
                from_memory: outcome.from_memory,
                full_tie: outcome.full_tie,
                stop,
            };
            transcript.rounds.push(record.clone());
            previous = Some(record);
            if stop {
                break;
            }
        }

        let best = memory.best().expect("at least one round ran").clone();
        let final_payload = store.payload(&best.artifact).expect("winner is stored");
        let final_image = final_payload.as_raster().expect("winner is a raster").clone();
        transcript.final_artifact = Some(best.artifact.clone());
        transcript.final_digest = Some(best.digest.clone());
        transcript.memory = memory;
        transcript.llm_calls = rec.calls;
        transcript.artifacts = store.artifacts();
        timings.total_ms = started.elapsed().as_secs_f64() * 1000.0;
        if let Some(dir) = &cfg.output_dir {
            persist(dir, &transcript, Some((&final_image, &timings))).map_err(SessionError::Io)?;
        }
        Ok(SessionResult {
            transcript,
            timings,
            final_image,
        })
    }
}

/// Writes `transcript.json`, `llm.jsonl`, and when finished `final.png` and
/// `timings.json`.
pub fn persist(dir: &Path, t: &Transcript, done: Option<(&Raster, &Timings)>) -> Result<(), String> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| format!("{}: {e}", p.display())
    };
    let path = dir.join("llm.jsonl");
    let store = ReplayStore::create(&path).map_err(io(&path))?;
    for r in t.replay_records() {
        store.append(r).map_err(io(&path))?;
    }
    if let Some((img, timings)) = done {
        let path = dir.join("final.png");
        img.save_png(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let path = dir.join("timings.json");
        let json = serde_json::to_vec_pretty(timings).expect("timings serialize");
        write_atomic(&path, &json).map_err(io(&path))?;
    }
    let path = dir.join("transcript.json");
    let json = serde_json::to_vec_pretty(t).expect("transcript serializes");
    write_atomic(&path, &json).map_err(io(&path))
}

/// Structural checks on a transcript; an empty result means it is well formed.
pub fn lint(t: &Transcript) -> Vec<String> {
    let mut issues = Vec::new();
    let cfg = &t.config;
    let n = cfg.num_agents;
    if t.schema_version != SCHEMA_VERSION {
        issues.push(format!("schema_version {} is not {SCHEMA_VERSION}", t.schema_version));
    }
    if t.rounds.len() as u32 > cfg.max_rounds {
        issues.push(format!("{} rounds exceed max_rounds {}", t.rounds.len(), cfg.max_rounds));
    }
    let mut expected = Vec::new();
    for (i, r) in t.rounds.iter().enumerate() {
        let round = i as u32 + 1;
        if r.round != round {
            issues.push(format!("round #{} is numbered {}", round, r.round));
        }
        for phase in [Phase::Plan, Phase::Execute, Phase::Feedback, Phase::Decompose] {
            for a in 1..=n {
                expected.push(Event { round, phase, agent: Some(a) });
            }
        }
        for phase in [Phase::Compete, Phase::Memory, Phase::StopCheck] {
            expected.push(Event { round, phase, agent: None });
        }
        if r.agents.len() as u32 != n {
            issues.push(format!("round {round}: {} agent records for {n} agents", r.agents.len()));
        }
        for (j, a) in r.agents.iter().enumerate() {
            if a.agent_id != j as u32 + 1 {
                issues.push(format!("round {round}: agent record #{} has id {}", j + 1, a.agent_id));
            }
            if let Err(e) = a.trace.check_chain() {
                issues.push(format!("round {round} agent {}: {e}", a.agent_id));
            }
            for (k, s) in a.plan.subtasks.iter().enumerate() {
                if s.index != k as u32 + 1 {
                    issues.push(format!("round {round} agent {}: subtask #{} has index {}", a.agent_id, k + 1, s.index));
                }
            }
            for s in &a.trace.steps {
                if let Some(out) = &s.output {
                    if *out != ArtifactId::step(round, a.agent_id, s.subtask) {
                        issues.push(format!("round {round} agent {}: step {} wrote `{out}`", a.agent_id, s.subtask));
                    }
                    if t.digest_of(out).is_none() {
                        issues.push(format!("artifact `{out}` is not listed"));
                    }
                }
            }
            if a.peer.is_some() && (!cfg.collaboration || round == 1) {
                issues.push(format!("round {round} agent {}: peer shown without collaboration", a.agent_id));
            }
        }
        let should = cfg.early_stop && should_stop(&r.winner.feedback);
        if r.stop != should {
            issues.push(format!("round {round}: stop flag {} disagrees with the winner's feedback", r.stop));
        }
        if r.stop && i + 1 != t.rounds.len() {
            issues.push(format!("round {round} stopped but later rounds follow"));
        }
        if cfg.competition {
            let best = r.agents.iter().map(|a| a.score).max_by(|x, y| x.cmp_total(y));
            if let Some(best) = best {
                if r.winner.score().cmp_quality(&best) == std::cmp::Ordering::Less {
                    issues.push(format!("round {round}: winner scores below a candidate"));
                }
            }
        }
    }
    if t.error.is_none() {
        if t.events != expected {
            issues.push("event sequence does not follow the round structure".into());
        }
        if let Some(last) = t.rounds.last() {
            if !last.stop && (t.rounds.len() as u32) < cfg.max_rounds {
                issues.push("session ended early without a stop".into());
            }
        }
        if t.rounds.is_empty() {
            issues.push("no rounds".into());
        }
        let mem_best = t.memory.best().map(|c| &c.artifact);
        if t.final_artifact.as_ref() != mem_best {
            issues.push("final artifact is not the memory's best".into());
        }
        if t.memory.entries.len() != t.rounds.len() {
            issues.push(format!("{} memory entries for {} rounds", t.memory.entries.len(), t.rounds.len()));
        }
    } else if !expected.starts_with(&t.events) && t.events != expected {
        issues.push("event sequence does not follow the round structure".into());
    }
    for (e, r) in t.memory.entries.iter().zip(&t.rounds) {
        if e.best != r.winner {
            issues.push(format!("memory entry {} differs from the round winner", e.appended_round));
        }
    }
    if cfg.competition && !t.memory.is_monotone() {
        issues.push("memory quality decreased with competition enabled".into());
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub round: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    pub detail: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "round {}", self.round)?;
        if let Some(a) = self.agent {
            write!(f, ", agent {a}")?;
        }
        if let Some(s) = self.step {
            write!(f, ", step {s}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// First point at which `actual` departs from `expected`.
pub fn first_divergence(expected: &Transcript, actual: &Transcript) -> Option<Divergence> {
    let at = |round, agent, step, detail: String| Some(Divergence { round, agent, step, detail });
    if expected.input_digest != actual.input_digest {
        return at(0, None, None, "input image differs".into());
    }
    if expected.questions != actual.questions {
        return at(0, None, None, "evaluation questions differ".into());
    }
    for (re, ra) in expected.rounds.iter().zip(&actual.rounds) {
        let r = re.round;
        for (ae, aa) in re.agents.iter().zip(&ra.agents) {
            let a = Some(ae.agent_id);
            if ae.plan.items() != aa.plan.items() {
                return at(r, a, None, "plans differ".into());
            }
            for (se, sa) in ae.trace.steps.iter().zip(&aa.trace.steps) {
                let s = Some(se.subtask);
                if se.call != sa.call {
                    return at(r, a, s, format!("call {:?} vs {:?}", se.call, sa.call));
                }
                let de = se.output.as_ref().and_then(|o| expected.digest_of(o));
                let da = sa.output.as_ref().and_then(|o| actual.digest_of(o));
                if de != da {
                    return at(r, a, s, "output image differs".into());
                }
                if se.error != sa.error {
                    return at(r, a, s, format!("error {:?} vs {:?}", se.error, sa.error));
                }
            }
            if ae.trace.steps.len() != aa.trace.steps.len() {
                return at(r, a, None, "step counts differ".into());
            }
            if ae.feedback != aa.feedback {
                return at(r, a, None, "feedback differs".into());
            }
        }
        if re.winner != ra.winner {
            return at(r, None, None, "round winner differs".into());
        }
    }
    if expected.rounds.len() != actual.rounds.len() {
        let r = expected.rounds.len().min(actual.rounds.len()) as u32 + 1;
        return at(r, None, None, format!("{} rounds vs {}", expected.rounds.len(), actual.rounds.len()));
    }
    if expected.final_digest != actual.final_digest {
        return at(expected.rounds_used(), None, None, "final image differs".into());
    }
    None
}
