//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cca_core::adapter::{stub::stub_worker, AdapterPool, InProcessTransport};
use cca_core::bench::{
    ablation_configs, default_workers, early_stop_configs, gen_tasks, load_corpus, measure_format_success,
    oracle_solve, run_benchmark, BenchReport, FormatMode, NoisyFormat, RuleBackend, RuleConfig, SyntheticTask,
    WellFormedBackend, DEFAULT_NODE_CAP,
};
use cca_core::discriminator::{should_stop, ImageRef, PropertyOracle, Vqa};
use cca_core::generator::UserRequest;
use cca_core::llm::parse::{parse_tool_call, ToolCallLine};
use cca_core::llm::{FnBackend, Gateway, LlmRequest, ReplayBackend, ReplayStore, TemplateId};
use cca_core::orchestrator::{lint, Evaluator, Session, SessionConfig, Transcript};
use cca_core::raster::Raster;
use cca_core::registry::Registry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SEED: u64 = 7;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn repo(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn rule() -> RuleConfig {
    RuleConfig { seed: SEED, ..Default::default() }
}

fn session<'a>(reg: &'a Registry, backend: Arc<dyn cca_core::llm::ChatBackend>, vqa: Arc<dyn Vqa>, config: SessionConfig) -> Session<'a> {
    Session {
        config,
        registry: reg,
        backend,
        adapters: AdapterPool::new(),
        evaluator: Evaluator { vqa, aesthetic: None, captioner: None },
        routing: Default::default(),
    }
}

fn request(goal: &str) -> UserRequest {
    UserRequest { goal: goal.into(), caption: Some("a synthetic test picture".into()) }
}

fn stopping(out: &mut Vec<Transcript>) -> Verdict {
    let started = Instant::now();
    let tasks = gen_tasks(SEED, 20, 3);
    let mut r = run_benchmark(&tasks, &early_stop_configs(&SessionConfig::default()), &rule(), default_workers(), true);
    let elapsed = started.elapsed();
    out.append(&mut r.transcripts);
    let on = &r.get("early-stop").unwrap().metrics;
    let off = &r.get("no-early-stop").unwrap().metrics;
    let ratio = on.mean_tool_calls / off.mean_tool_calls;
    verdict(
        ratio <= 0.75 && on.mean_rounds <= 3.5 && off.mean_rounds == 5.0 && elapsed < Duration::from_secs(120),
        format!(
            "tool calls {:.2} vs {:.2} (ratio {ratio:.3} <= 0.75), rounds {:.2} <= 3.5 vs {:.2}, {:.1}s < 120s",
            on.mean_tool_calls,
            off.mean_tool_calls,
            on.mean_rounds,
            off.mean_rounds,
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation(report: &BenchReport, elapsed: Duration) -> Verdict {
    let rate = |n: &str| report.get(n).unwrap().metrics.solve_rate;
    let (full, nc, ncp, nn) = (rate("full"), rate("no-collab"), rate("no-compete"), rate("neither"));
    verdict(
        full >= nc && full >= ncp && full >= nn && full - nn >= 0.05 && elapsed < Duration::from_secs(600),
        format!(
            "full {:.1}%, no-collab {:.1}%, no-compete {:.1}%, neither {:.1}%, gap {:.1}pp >= 5, {:.1}s < 600s",
            full * 100.0,
            nc * 100.0,
            ncp * 100.0,
            nn * 100.0,
            (full - nn) * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence(suites: &[(&[SyntheticTask], &BenchReport, &str)]) -> Verdict {
    let reg = Registry::shipped().builtins_only();
    let (mut solvable, mut solved, mut capped) = (0, 0, 0);
    for (tasks, report, config) in suites {
        let runs = &report.get(config).unwrap().runs;
        for (t, run) in tasks.iter().zip(runs) {
            assert_eq!(t.id, run.task);
            match oracle_solve(t, &reg, 3, DEFAULT_NODE_CAP) {
                Ok(Some(_)) => {
                    solvable += 1;
                    solved += run.solved as usize;
                }
                Ok(None) => {}
                Err(_) => capped += 1,
            }
        }
    }
    let share = solved as f64 / solvable.max(1) as f64;
    verdict(
        solvable > 0 && share >= 0.95,
        format!("engine solved {solved}/{solvable} oracle-solvable tasks ({:.1}% >= 95%), {capped} over the node cap", share * 100.0),
    )
}

/// Always answers that the hat is missing and the edit too weak.
struct UnmetVqa;

impl Vqa for UnmetVqa {
    fn name(&self) -> String {
        "unmet".into()
    }
    fn answer(&self, _: ImageRef<'_>, _: &str) -> Result<String, String> {
        Ok("No, the hat effect is too weak.".into())
    }
}

fn escalation(out: &mut Vec<Transcript>) -> Verdict {
    let reg = Registry::shipped();
    let dir = tempfile::tempdir().unwrap();
    let backend = FnBackend::new("escalation-script", |r: &LlmRequest| match r.template {
        TemplateId::QuestionGen => Ok("1. Is there a hat on the person?".into()),
        TemplateId::PlannerInitial => Ok("1. Add a hat to the person using InstructDiffusion".into()),
        TemplateId::PlannerReflect => Ok("No".into()),
        // the executor keeps proposing the default strength
        _ => Ok("InstructDiffusion @@ image/input.png <-> add a hat <-> 4.0".into()),
    });
    let mut adapters = AdapterPool::new();
    adapters.insert("diffusion", Arc::new(InProcessTransport::new("stub", stub_worker())));
    let input = gen_tasks(SEED, 1, 1)[0].input();
    let s = Session {
        config: SessionConfig {
            num_agents: 1,
            max_rounds: 7,
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        },
        registry: &reg,
        backend: Arc::new(backend),
        adapters,
        evaluator: Evaluator { vqa: Arc::new(UnmetVqa), aesthetic: None, captioner: None },
        routing: Default::default(),
    };
    let t = s.run(input, request("Add a hat to the person.")).unwrap().transcript;
    let seq: Vec<f64> = t
        .rounds
        .iter()
        .map(|r| {
            let call = r.agents[0].trace.steps[0].call.as_deref().expect("bound call");
            parse_tool_call(call).unwrap().args[2].parse::<f64>().unwrap()
        })
        .collect();
    out.push(t);
    let cap = 8.0;
    let monotone = seq.windows(2).all(|w| w[1] >= w[0]);
    let first_cap = seq.iter().position(|&v| v == cap);
    let holds = first_cap.is_some_and(|i| seq[i..].iter().all(|&v| v == cap));
    verdict(
        seq.len() >= 5 && monotone && holds && seq.iter().all(|&v| v <= cap),
        format!("txt_cfg per round {seq:?}: non-decreasing, reaches {cap} and holds"),
    )
}

fn format_grammar() -> Verdict {
    #[derive(serde::Deserialize)]
    struct Valid {
        text: String,
        tool: String,
        args: Vec<String>,
        canonical: String,
    }
    let text = std::fs::read_to_string(repo("protocol/vectors/toolcalls_valid.jsonl")).unwrap();
    let vectors: Vec<Valid> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ok = vectors
        .iter()
        .filter(|v| {
            parse_tool_call(&v.text).is_ok_and(|c| {
                c == ToolCallLine::new(v.tool.clone(), v.args.clone())
                    && c.render() == v.canonical
                    && parse_tool_call(&v.canonical).is_ok_and(|d| d == c)
            })
        })
        .count();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let alphabet: Vec<char> = "ab Z09_-@<->↔`\n\t.,:!".chars().collect();
    let mut crashes = 0;
    let mut round_trip_failures = 0;
    for i in 0..1000 {
        let len = rng.random_range(0..60);
        let s: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let res = catch_unwind(|| parse_tool_call(&s));
        match res {
            Err(_) => crashes += 1,
            Ok(Ok(c)) if c.is_representable() && i % 2 == 0 => {
                if parse_tool_call(&c.render()).ok() != Some(c) {
                    round_trip_failures += 1;
                }
            }
            Ok(_) => {}
        }
    }

    let reg = Registry::shipped();
    let corpus = load_corpus(&repo("bench/corpus/editing_prompts.txt")).unwrap();
    let gw = Gateway::new(Arc::new(NoisyFormat::new(Arc::new(WellFormedBackend), SEED)));
    let h = measure_format_success(&gw, &reg, &corpus, FormatMode::Hierarchical);
    let o = measure_format_success(&gw, &reg, &corpus, FormatMode::OneStage);
    let measurable = h.prompts == 100 && o.prompts == 100 && (0.0..=1.0).contains(&h.rate) && (0.0..=1.0).contains(&o.rate);
    verdict(
        ok == vectors.len() && crashes == 0 && round_trip_failures == 0 && measurable,
        format!(
            "vectors {ok}/{}, fuzz 1000 cases {crashes} crashes {round_trip_failures} round-trip failures, format success hierarchical {:.2} one-stage {:.2} (noisy stub)",
            vectors.len(),
            h.rate,
            o.rate
        ),
    )
}

fn determinism(out: &mut Vec<Transcript>) -> Verdict {
    let reg = Registry::shipped().builtins_only();
    let tasks = gen_tasks(SEED + 1, 3, 3);
    let mut problems = Vec::new();
    let mut net_delta = 0;
    for t in &tasks {
        let input = t.input();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = |d: &tempfile::TempDir| SessionConfig { output_dir: Some(d.path().to_path_buf()), seed: SEED, ..Default::default() };
        let vqa = Arc::new(PropertyOracle::new(Arc::new(input.clone())));
        let first = session(&reg, Arc::new(RuleBackend::new(rule())), vqa.clone(), cfg(&a))
            .run(input.clone(), request(&t.goal))
            .unwrap();
        let records = ReplayStore::load(&a.path().join("llm.jsonl")).unwrap();
        let replay = ReplayBackend::new(records).named(first.transcript.backend.clone());
        cca_core::net::set_forbidden(true);
        let before = cca_core::net::calls();
        let second = session(&reg, Arc::new(replay), vqa, cfg(&b)).run(input.clone(), request(&t.goal));
        net_delta += cca_core::net::calls() - before;
        cca_core::net::set_forbidden(false);
        let second = second.unwrap();
        for f in ["transcript.json", "final.png", "llm.jsonl"] {
            if std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap() {
                problems.push(format!("task {} {f}", t.id));
            }
        }
        if first.transcript.final_digest != second.transcript.final_digest {
            problems.push(format!("task {} final digest", t.id));
        }
        out.push(first.transcript);
        out.push(second.transcript);
    }
    verdict(
        problems.is_empty() && net_delta == 0,
        format!("{} sessions replayed byte-identically, {net_delta} network calls in replay {problems:?}", tasks.len()),
    )
}

/// Answers yes, no or cannot-tell at random, fixed per (image, question).
struct CoinVqa(u64);

impl Vqa for CoinVqa {
    fn name(&self) -> String {
        "coin".into()
    }
    fn answer(&self, image: ImageRef<'_>, q: &str) -> Result<String, String> {
        let d = Sha256::digest(format!("{}|{}|{q}", self.0, image.raster.digest()).as_bytes());
        Ok(["Yes.", "No, it does not look right.", "Cannot tell."][d[0] as usize % 3].into())
    }
}

fn invariants(out: &mut Vec<Transcript>) -> Verdict {
    let reg = Registry::shipped().builtins_only();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut sessions, mut aborted) = (0, 0);
    let mut violations: Vec<String> = Vec::new();
    for i in 0..1000u64 {
        let task = gen_tasks(SEED * 1000 + i, 1, 3).remove(0);
        let input: Raster = task.input();
        let config = SessionConfig {
            num_agents: rng.random_range(1..=3),
            max_rounds: rng.random_range(1..=5),
            collaboration: rng.random_bool(0.5),
            competition: rng.random_bool(0.5),
            early_stop: rng.random_bool(0.7),
            seed: i,
            ..Default::default()
        };
        let rc = RuleConfig { seed: i, flaw_rate: rng.random_range(0.0..1.0), fix_rate: rng.random_range(0.0..1.0) };
        let vqa: Arc<dyn Vqa> = if rng.random_bool(0.5) {
            Arc::new(PropertyOracle::new(Arc::new(input.clone())))
        } else {
            Arc::new(CoinVqa(i))
        };
        let t = match session(&reg, Arc::new(RuleBackend::new(rc)), vqa, config.clone()).run(input.clone(), request(&task.goal)) {
            Ok(r) => r.transcript,
            Err(f) => {
                aborted += 1;
                match f.transcript {
                    Some(t) => *t,
                    None => continue,
                }
            }
        };
        sessions += 1;
        let mut bad = |what: &str| violations.push(format!("session {i}: {what}"));
        if config.competition && !t.memory.is_monotone() {
            bad("memory score regressed");
        }
        if t.error.is_none() && t.memory.entries.len() != t.rounds.len() {
            bad("memory entries differ from rounds");
        }
        for r in &t.rounds {
            for a in &r.agents {
                let idx: Vec<u32> = a.subtask_feedback.iter().map(|f| f.index).collect();
                let want: Vec<u32> = a.plan.subtasks.iter().map(|s| s.index).collect();
                if idx != want {
                    bad("decomposition not total");
                }
            }
            if r.stop != (config.early_stop && should_stop(&r.winner.feedback)) {
                bad("stop flag disagrees with the winner's feedback");
            }
        }
        let stops = t.rounds.iter().filter(|r| r.stop).count();
        if stops > 1 || (stops == 1 && !t.rounds.last().unwrap().stop) {
            bad("session continued after a stop");
        }
        if t.error.is_none() && stops == 0 && t.rounds_used() != config.max_rounds {
            bad("ended early without a stop");
        }
        out.push(t);
    }
    verdict(
        violations.is_empty() && sessions >= 950,
        format!("1000 randomized sessions ({sessions} with transcripts, {aborted} aborted): {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    )
}

fn linter(all: &[Transcript]) -> Verdict {
    let failing: Vec<String> = all
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let issues = lint(t);
            (!issues.is_empty()).then(|| format!("#{i}: {}", issues.join("; ")))
        })
        .collect();
    verdict(
        failing.is_empty(),
        format!("{} transcripts checked, {} failing {:?}", all.len(), failing.len(), failing.iter().take(3).collect::<Vec<_>>()),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    })
}

fn main() {
    let mut transcripts: Vec<Transcript> = Vec::new();
    let mut results: Vec<(&str, Verdict)> = Vec::new();

    results.push(("stopping criteria ratio", guarded(|| stopping(&mut transcripts))));

    let started = Instant::now();
    let suite = gen_tasks(SEED, 100, 3);
    let ablation_report = guarded_report(|| run_benchmark(&suite, &ablation_configs(&SessionConfig::default()), &rule(), default_workers(), true));
    let ablation_elapsed = started.elapsed();
    let stop_suite = gen_tasks(SEED, 20, 3);
    let stop_report = guarded_report(|| run_benchmark(&stop_suite, &early_stop_configs(&SessionConfig::default())[..1], &rule(), default_workers(), false));
    match (&ablation_report, &stop_report) {
        (Some(ab), Some(st)) => {
            results.push(("ablation ordering", guarded(|| ablation(ab, ablation_elapsed))));
            results.push((
                "oracle equivalence",
                guarded(|| oracle_equivalence(&[(&suite, ab, "full"), (&stop_suite, st, "early-stop")])),
            ));
        }
        _ => {
            results.push(("ablation ordering", verdict(false, "benchmark run panicked".into())));
            results.push(("oracle equivalence", verdict(false, "benchmark run panicked".into())));
        }
    }
    if let Some(mut ab) = ablation_report {
        transcripts.append(&mut ab.transcripts);
    }

    results.push(("strength escalation", guarded(|| escalation(&mut transcripts))));
    results.push(("format grammar", guarded(format_grammar)));
    results.push(("determinism", guarded(|| determinism(&mut transcripts))));
    results.push(("discriminator invariants", guarded(|| invariants(&mut transcripts))));
    results.push(("algorithm linter", guarded(|| linter(&transcripts))));

    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn guarded_report(f: impl FnOnce() -> BenchReport) -> Option<BenchReport> {
    catch_unwind(AssertUnwindSafe(f)).ok()
}
