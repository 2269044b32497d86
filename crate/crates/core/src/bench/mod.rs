//! Synthetic benchmark: generated editing tasks with exact checkers, a
//! brute-force reference solver, and a runner that plays sessions under
//! several engine configurations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use web_time::Instant;

pub mod format;
pub mod oracle;
pub mod rule;
pub mod task;

pub use format::{load_corpus, measure_format_success, FormatMode, FormatReport, NoisyFormat, WellFormedBackend};
pub use oracle::{oracle_solve, verify_plan, OracleError, DEFAULT_NODE_CAP};
pub use rule::{RuleBackend, RuleConfig};
pub use task::{gen_tasks, Predicate, SyntheticTask};

use crate::adapter::AdapterPool;
use crate::discriminator::PropertyOracle;
use crate::generator::UserRequest;
use crate::orchestrator::{Evaluator, Session, SessionConfig, Transcript};
use crate::registry::Registry;

/// Outcome of one task under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task: u32,
    pub tool_len: usize,
    pub solved: bool,
    pub tool_calls: usize,
    pub rounds: u32,
    pub agent_rounds: usize,
    pub plan_parse_ok: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub tasks: usize,
    pub solved: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchMetrics {
    pub tasks: usize,
    pub solved: usize,
    pub solve_rate: f64,
    pub mean_tool_calls: f64,
    pub mean_rounds: f64,
    pub plan_parse_success_rate: f64,
    /// Keyed by the number of tool calls the task needs.
    pub by_length: BTreeMap<usize, LengthBucket>,
}

impl BenchMetrics {
    pub fn from_runs(runs: &[TaskRun]) -> Self {
        let n = runs.len();
        let mean = |f: &dyn Fn(&TaskRun) -> f64| if n == 0 { 0.0 } else { runs.iter().map(f).sum::<f64>() / n as f64 };
        let solved = runs.iter().filter(|r| r.solved).count();
        let agent_rounds: usize = runs.iter().map(|r| r.agent_rounds).sum();
        let parsed: usize = runs.iter().map(|r| r.plan_parse_ok).sum();
        let mut by_length: BTreeMap<usize, LengthBucket> = BTreeMap::new();
        for r in runs {
            let b = by_length.entry(r.tool_len).or_default();
            b.tasks += 1;
            b.solved += r.solved as usize;
        }
        Self {
            tasks: n,
            solved,
            solve_rate: if n == 0 { 0.0 } else { solved as f64 / n as f64 },
            mean_tool_calls: mean(&|r| r.tool_calls as f64),
            mean_rounds: mean(&|r| r.rounds as f64),
            plan_parse_success_rate: if agent_rounds == 0 { 0.0 } else { parsed as f64 / agent_rounds as f64 },
            by_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub name: String,
    pub config: SessionConfig,
    pub metrics: BenchMetrics,
    pub runs: Vec<TaskRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rule: RuleConfig,
    pub tasks: usize,
    pub configs: Vec<ConfigResult>,
    pub elapsed_ms: f64,
    /// Transcripts are kept only when asked for (they are large).
    #[serde(skip)]
    pub transcripts: Vec<Transcript>,
}

impl BenchReport {
    pub fn get(&self, name: &str) -> Option<&ConfigResult> {
        self.configs.iter().find(|c| c.name == name)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>8} {:>11} {:>8} {:>10}",
            "config", "tasks", "solved", "tool calls", "rounds", "plan ok"
        );
        for c in &self.configs {
            let m = &c.metrics;
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>7.1}% {:>11.2} {:>8.2} {:>9.1}%",
                c.name,
                m.tasks,
                m.solve_rate * 100.0,
                m.mean_tool_calls,
                m.mean_rounds,
                m.plan_parse_success_rate * 100.0
            );
        }
        out
    }
}

/// Named configurations for the stopping comparison.
pub fn early_stop_configs(base: &SessionConfig) -> Vec<(String, SessionConfig)> {
    [("early-stop", true), ("no-early-stop", false)]
        .into_iter()
        .map(|(n, on)| (n.to_string(), SessionConfig { early_stop: on, ..base.clone() }))
        .collect()
}

/// Collaboration and competition switched on and off independently.
pub fn ablation_configs(base: &SessionConfig) -> Vec<(String, SessionConfig)> {
    [
        ("full", true, true),
        ("no-collab", false, true),
        ("no-compete", true, false),
        ("neither", false, false),
    ]
    .into_iter()
    .map(|(n, collab, comp)| {
        (
            n.to_string(),
            SessionConfig {
                collaboration: collab,
                competition: comp,
                ..base.clone()
            },
        )
    })
    .collect()
}

/// Plays one task under one configuration with the rule backend and the
/// property oracle as judge.
pub fn run_task(task: &SyntheticTask, config: &SessionConfig, rule: &RuleConfig, registry: &Registry) -> (TaskRun, Option<Transcript>) {
    let input = task.input();
    let session = Session {
        config: SessionConfig { output_dir: None, ..config.clone() },
        registry,
        backend: Arc::new(RuleBackend::new(rule.clone())),
        adapters: AdapterPool::new(),
        evaluator: Evaluator {
            vqa: Arc::new(PropertyOracle::new(Arc::new(input.clone()))),
            aesthetic: None,
            captioner: None,
        },
        routing: Default::default(),
    };
    let request = UserRequest {
        goal: task.goal.clone(),
        caption: Some("a synthetic test picture".into()),
    };
    let mut run = TaskRun {
        task: task.id,
        tool_len: task.tool_len(),
        solved: false,
        tool_calls: 0,
        rounds: 0,
        agent_rounds: 0,
        plan_parse_ok: 0,
        error: None,
    };
    let transcript = match session.run(input.clone(), request) {
        Ok(res) => {
            run.solved = task.check(&input, &res.final_image).passed();
            Some(res.transcript)
        }
        Err(f) => {
            run.error = Some(f.error.to_string());
            f.transcript.map(|t| *t)
        }
    };
    if let Some(t) = &transcript {
        run.rounds = t.rounds_used();
        for r in &t.rounds {
            for a in &r.agents {
                run.tool_calls += a.trace.tool_calls();
                run.agent_rounds += 1;
                run.plan_parse_ok += a.plan_error.is_none() as usize;
            }
        }
    }
    (run, transcript)
}

/// Runs every task under every configuration on `workers` threads.
pub fn run_benchmark(
    tasks: &[SyntheticTask],
    configs: &[(String, SessionConfig)],
    rule: &RuleConfig,
    workers: usize,
    keep_transcripts: bool,
) -> BenchReport {
    let started = Instant::now();
    let registry = Registry::shipped().builtins_only();
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..tasks.len()).map(move |t| (c, t))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(TaskRun, Option<Transcript>)>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(c, t)) = jobs.get(i) else { break };
                let (run, tr) = run_task(&tasks[t], &configs[c].1, rule, &registry);
                let tr = if keep_transcripts { tr } else { None };
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some((run, tr));
            });
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter();
    let mut out = Vec::new();
    let mut transcripts = Vec::new();
    for (name, config) in configs {
        let mut runs = Vec::with_capacity(tasks.len());
        for _ in 0..tasks.len() {
            let (run, tr) = results.next().flatten().expect("every job ran");
            runs.push(run);
            transcripts.extend(tr);
        }
        out.push(ConfigResult {
            name: name.clone(),
            config: config.clone(),
            metrics: BenchMetrics::from_runs(&runs),
            runs,
        });
    }
    BenchReport {
        rule: rule.clone(),
        tasks: tasks.len(),
        configs: out,
        elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
        transcripts,
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::lint;

    #[test]
    fn small_run_is_consistent() {
        let tasks = gen_tasks(5, 6, 3);
        let configs = ablation_configs(&SessionConfig::default());
        let report = run_benchmark(&tasks, &configs, &RuleConfig::default(), 4, true);
        assert_eq!(report.configs.len(), 4);
        for t in &report.transcripts {
            assert!(lint(t).is_empty(), "{:?}", lint(t));
        }
        for c in &report.configs {
            assert_eq!(c.metrics.tasks, 6);
            assert!(c.runs.iter().all(|r| r.error.is_none()), "{:?}", c.runs);
        }
        assert!(report.table().contains("no-compete"));
    }

    #[test]
    fn metrics_arithmetic() {
        let mk = |solved, calls, rounds, len| TaskRun {
            task: 0,
            tool_len: len,
            solved,
            tool_calls: calls,
            rounds,
            agent_rounds: 2,
            plan_parse_ok: 1,
            error: None,
        };
        let m = BenchMetrics::from_runs(&[mk(true, 4, 1, 1), mk(false, 8, 3, 2)]);
        assert_eq!(m.solve_rate, 0.5);
        assert_eq!(m.mean_tool_calls, 6.0);
        assert_eq!(m.mean_rounds, 2.0);
        assert_eq!(m.plan_parse_success_rate, 0.5);
        assert_eq!(m.by_length[&2], LengthBucket { tasks: 1, solved: 0 });
    }
}
