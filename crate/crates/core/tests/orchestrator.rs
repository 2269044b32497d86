use std::sync::Arc;

use cca_core::adapter::AdapterPool;
use cca_core::bench::{gen_tasks, Predicate, RuleBackend, RuleConfig, SyntheticTask};
use cca_core::discriminator::PropertyOracle;
use cca_core::generator::UserRequest;
use cca_core::llm::{ChatBackend, FnBackend, LlmError, LlmRequest, ReplayBackend, ReplayStore, ScriptedBackend, TemplateId};
use cca_core::orchestrator::{first_divergence, lint, Evaluator, Session, SessionConfig, SessionError, Transcript};
use cca_core::raster::Raster;
use cca_core::registry::Registry;

fn task(preds: Vec<Predicate>) -> SyntheticTask {
    SyntheticTask::new(0, 99, 96, 72, preds)
}

fn session<'a>(reg: &'a Registry, backend: Arc<dyn ChatBackend>, input: &Raster, config: SessionConfig) -> Session<'a> {
    Session {
        config,
        registry: reg,
        backend,
        adapters: AdapterPool::new(),
        evaluator: Evaluator {
            vqa: Arc::new(PropertyOracle::new(Arc::new(input.clone()))),
            aesthetic: None,
            captioner: None,
        },
        routing: Default::default(),
    }
}

fn request(goal: &str) -> UserRequest {
    UserRequest {
        goal: goal.into(),
        caption: Some("a test picture".into()),
    }
}

fn gray_script() -> ScriptedBackend {
    ScriptedBackend::new()
        .push(TemplateId::QuestionGen, "1. Is the image in grayscale?")
        .push(TemplateId::PlannerInitial, "1. Convert the image to grayscale using RGB2Gray")
}

#[test]
fn scripted_gray_session_stops_after_one_round() {
    let reg = Registry::shipped().builtins_only();
    let t = task(vec![Predicate::Grayscale]);
    let input = t.input();
    let res = session(&reg, Arc::new(gray_script()), &input, SessionConfig::default())
        .run(input.clone(), request(&t.goal))
        .unwrap();
    let tr = &res.transcript;
    assert_eq!(tr.rounds_used(), 1);
    assert!(tr.stopped_early());
    assert!(lint(tr).is_empty(), "{:?}", lint(tr));
    assert!(t.check(&input, &res.final_image).passed());
    // one question call plus one plan per agent; the gray tool needs no arguments
    assert_eq!(tr.llm_calls.len(), 3);
}

#[test]
fn transcript_round_trips_and_rejects_damage() {
    let reg = Registry::shipped().builtins_only();
    let t = task(vec![Predicate::Grayscale]);
    let input = t.input();
    let tr = session(&reg, Arc::new(gray_script()), &input, SessionConfig::default())
        .run(input.clone(), request(&t.goal))
        .unwrap()
        .transcript;
    let text = serde_json::to_string_pretty(&tr).unwrap();
    assert_eq!(Transcript::from_json(&text).unwrap(), tr);
    assert!(Transcript::from_json(&text[..text.len() / 2]).is_err());
    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
    assert!(Transcript::from_json(&bumped).unwrap_err().contains("schema_version"));
    let extra = text.replacen('{', "{\"surprise\": 1,", 1);
    assert!(Transcript::from_json(&extra).is_err());
}

#[test]
fn empty_goal_and_bad_agent_counts_are_rejected() {
    let reg = Registry::shipped().builtins_only();
    let input = task(vec![Predicate::Grayscale]).input();
    let s = session(&reg, Arc::new(gray_script()), &input, SessionConfig::default());
    assert!(matches!(s.run(input.clone(), request("  ")).unwrap_err().error, SessionError::EmptyGoal));
    for n in [0, 4] {
        let cfg = SessionConfig { num_agents: n, ..Default::default() };
        let err = session(&reg, Arc::new(gray_script()), &input, cfg).run(input.clone(), request("Gray.")).unwrap_err();
        assert!(matches!(err.error, SessionError::Config(_)), "{n}");
    }
}

#[test]
fn one_and_three_agents_run_clean() {
    let reg = Registry::shipped().builtins_only();
    for t in gen_tasks(3, 4, 3) {
        let input = t.input();
        for n in [1, 3] {
            let cfg = SessionConfig { num_agents: n, ..Default::default() };
            let res = session(&reg, Arc::new(RuleBackend::new(RuleConfig::default())), &input, cfg)
                .run(input.clone(), request(&t.goal))
                .unwrap();
            assert!(lint(&res.transcript).is_empty(), "{:?}", lint(&res.transcript));
            assert!(res.transcript.rounds.iter().all(|r| r.agents.len() == n as usize));
        }
    }
}

#[test]
fn unavailable_backend_fails_the_session() {
    let reg = Registry::shipped().builtins_only();
    let input = task(vec![Predicate::Grayscale]).input();
    let down = FnBackend::new("down", |_: &LlmRequest| Err(LlmError::Network { attempts: 3, message: "refused".into() }));
    let err = session(&reg, Arc::new(down), &input, SessionConfig::default())
        .run(input.clone(), request("Make it gray."))
        .unwrap_err();
    assert!(matches!(err.error, SessionError::Llm(_)));
    assert!(err.to_string().starts_with("backend unavailable"));
}

#[test]
fn every_step_failing_aborts_with_partial_transcript() {
    let reg = Registry::shipped().builtins_only();
    let input = task(vec![Predicate::Grayscale]).input();
    let dir = tempfile::tempdir().unwrap();
    let backend = ScriptedBackend::new()
        .push(TemplateId::QuestionGen, "1. Is the image blurred?")
        .push(TemplateId::PlannerInitial, "1. Blur the image using GaussianBlur")
        .push(TemplateId::ExecutorToolcall, "GaussianBlur @@ image/input.png <-> 4");
    let cfg = SessionConfig { output_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let err = session(&reg, Arc::new(backend), &input, cfg).run(input.clone(), request("Blur it.")).unwrap_err();
    assert!(matches!(err.error, SessionError::Aborted(_)), "{}", err.error);
    let mut partial = err.transcript.expect("partial transcript");
    partial.config.output_dir = None;
    assert!(partial.error.is_some());
    assert!(lint(&partial).is_empty(), "{:?}", lint(&partial));
    let saved = Transcript::load(&dir.path().join("transcript.json")).unwrap();
    assert_eq!(saved, *partial);
}

#[test]
fn panicking_agent_is_isolated() {
    let reg = Registry::shipped().builtins_only();
    let t = task(vec![Predicate::Grayscale]);
    let input = t.input();
    let backend = FnBackend::new("flaky", |r: &LlmRequest| match r.template {
        TemplateId::QuestionGen => Ok("1. Is the image in grayscale?".into()),
        TemplateId::PlannerInitial if r.origin.agent == Some(2) => panic!("agent two fell over"),
        _ => Ok("1. Convert the image to grayscale using RGB2Gray".into()),
    });
    let res = session(&reg, Arc::new(backend), &input, SessionConfig::default())
        .run(input.clone(), request(&t.goal))
        .unwrap();
    let r1 = &res.transcript.rounds[0];
    assert_eq!(r1.winner.agent_id, 1);
    assert!(r1.agents[1].plan_error.as_deref().unwrap().contains("panicked"));
    assert!(lint(&res.transcript).is_empty(), "{:?}", lint(&res.transcript));
}

fn reflect_prompts(tr: &Transcript) -> Vec<String> {
    tr.llm_calls
        .iter()
        .filter(|c| c.call.template == TemplateId::PlannerReflect)
        .map(|c| c.call.prompt.clone())
        .collect()
}

#[test]
fn peer_block_only_with_collaboration() {
    let reg = Registry::shipped().builtins_only();
    let t = task(vec![Predicate::Grayscale]);
    let input = t.input();
    let stubborn = || {
        ScriptedBackend::new()
            .push(TemplateId::QuestionGen, "1. Is the image in grayscale?")
            .push(TemplateId::PlannerInitial, "1. Convert the image to grayscale using FlipHorizontal")
            .push(TemplateId::PlannerReflect, "No")
    };
    for collaboration in [true, false] {
        let cfg = SessionConfig { collaboration, max_rounds: 3, ..Default::default() };
        let tr = session(&reg, Arc::new(stubborn()), &input, cfg).run(input.clone(), request(&t.goal)).unwrap().transcript;
        let prompts = reflect_prompts(&tr);
        assert_eq!(prompts.len(), 4);
        for p in &prompts {
            assert_eq!(p.contains("Besides, we also have another plan"), collaboration);
            assert!(p.contains("Satisfied checks: 0/1"));
        }
        assert_eq!(tr.rounds[1].agents[0].peer, collaboration.then_some(2));
        assert!(lint(&tr).is_empty(), "{:?}", lint(&tr));
    }
}

#[test]
fn record_then_replay_is_byte_identical_and_offline() {
    let reg = Registry::shipped().builtins_only();
    let t = gen_tasks(21, 8, 3).into_iter().max_by_key(|t| t.tool_len()).unwrap();
    let input = t.input();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = |d: &tempfile::TempDir| SessionConfig { output_dir: Some(d.path().to_path_buf()), seed: 5, ..Default::default() };
    let original = session(&reg, Arc::new(RuleBackend::new(RuleConfig::default())), &input, cfg(&a))
        .run(input.clone(), request(&t.goal))
        .unwrap();
    let records = ReplayStore::load(&a.path().join("llm.jsonl")).unwrap();
    assert_eq!(records, original.transcript.replay_records());

    let before = cca_core::net::calls();
    let replay = ReplayBackend::new(records).named(original.transcript.backend.clone());
    let again = session(&reg, Arc::new(replay), &input, cfg(&b)).run(input.clone(), request(&t.goal)).unwrap();
    assert_eq!(cca_core::net::calls(), before);
    for f in ["transcript.json", "llm.jsonl", "final.png"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    assert!(first_divergence(&original.transcript, &again.transcript).is_none());
}

#[test]
fn edited_recording_reports_first_divergence() {
    let reg = Registry::shipped().builtins_only();
    let t = task(vec![Predicate::Grayscale, Predicate::FlippedH]);
    let input = t.input();
    let original = session(&reg, Arc::new(RuleBackend::new(RuleConfig::default())), &input, SessionConfig::default())
        .run(input.clone(), request(&t.goal))
        .unwrap()
        .transcript;
    let mut records = original.replay_records();
    let i = records.iter().position(|r| r.template == "planner_initial").unwrap();
    records[i].response = "1. Flip the image horizontally using RotateClockwise".into();
    let edited = session(&reg, Arc::new(ReplayBackend::new(records)), &input, SessionConfig::default())
        .run(input.clone(), request(&t.goal));
    let edited = match edited {
        Ok(r) => r.transcript,
        Err(f) => *f.transcript.unwrap(),
    };
    let d = first_divergence(&original, &edited).expect("divergence");
    assert_eq!(d.round, 1);
    assert_eq!(d.agent, Some(1));
}

#[test]
fn early_stop_never_costs_more() {
    let reg = Registry::shipped().builtins_only();
    for t in gen_tasks(8, 6, 3) {
        let input = t.input();
        let run = |early_stop| {
            let cfg = SessionConfig { early_stop, ..Default::default() };
            session(&reg, Arc::new(RuleBackend::new(RuleConfig::default())), &input, cfg)
                .run(input.clone(), request(&t.goal))
                .unwrap()
                .transcript
        };
        let (on, off) = (run(true), run(false));
        assert!(on.rounds_used() <= off.rounds_used());
        assert_eq!(off.rounds_used(), off.config.max_rounds);
        // identical up to the stopping round
        for (x, y) in on.rounds.iter().zip(&off.rounds) {
            assert_eq!(x.agents, y.agents);
            assert_eq!(x.winner, y.winner);
        }
        assert!(lint(&on).is_empty() && lint(&off).is_empty());
    }
}
