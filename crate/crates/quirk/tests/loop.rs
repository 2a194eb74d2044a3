//! End-to-end loop tests: agent session + in-process reference environment
//! + scripted gateway, all offline.

mod common;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use common::{harness_with, run_session, scripted_backend};
use quirk::config::{load_config_from_str, RunConfig};
use quirk::gateway::{ScriptedBackend, ScriptedReply};
use quirk::memory::{HashEmbedder, MemoryStore, Outcome};
use quirk::refenv::{
    builtin_scenario, parse_scenario, verify_transcript, EnvHarness, ServeOptions,
};
use quirk::session::{parse_report, run, StopReason};

fn test_config(extra: &str) -> RunConfig {
    common::test_config("looper", extra)
}

#[test]
fn short_run_completes_and_conserves_memories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = test_config("MAX_ITERATIONS=5\n");
    let (report, env) = run_session(
        cfg,
        scripted_backend(),
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );

    assert_eq!(report.stop_reason, StopReason::DurationElapsed);
    assert_eq!(report.iterations.len(), 5);
    for (i, record) in report.iterations.iter().enumerate() {
        assert_eq!(record.index, i as u64 + 1);
        assert_eq!(record.outcome, Outcome::Success);
        assert!(record.gateway_calls >= 3);
    }

    // Loop conservation: one stored memory per iteration.
    let store =
        MemoryStore::open(dir.path(), "looper", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    assert_eq!(store.memory_count(), 5);
    for record in &report.iterations {
        assert!(store.get_memory(&record.memory_id).is_some());
    }

    // The wire conversation is fully conformant. Each iteration fetches
    // status twice: at the start and again after the action.
    let stats = verify_transcript(&env.transcript()).unwrap();
    assert_eq!(stats.actions, 5);
    assert_eq!(stats.get_status, 10);
}

#[test]
fn continued_session_preserves_memory_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = test_config("MAX_ITERATIONS=4\nIS_CONTINUED=true\n");
    run_session(
        cfg.clone(),
        scripted_backend(),
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );
    let (second, _) = run_session(
        cfg,
        scripted_backend(),
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );
    assert_eq!(second.iterations.len(), 4);
    let store =
        MemoryStore::open(dir.path(), "looper", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    assert_eq!(store.memory_count(), 8);
}

#[test]
fn fresh_session_deletes_prior_data() {
    let dir = tempfile::tempdir().unwrap();
    run_session(
        test_config("MAX_ITERATIONS=4\n"),
        scripted_backend(),
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );
    let (second, _) = run_session(
        test_config("MAX_ITERATIONS=3\nIS_CONTINUED=false\n"),
        scripted_backend(),
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );
    assert_eq!(second.iterations.len(), 3);
    let store =
        MemoryStore::open(dir.path(), "looper", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    assert_eq!(store.memory_count(), 3);
}

#[test]
fn single_iteration_fault_is_contained() {
    // Iteration 3's planning call dies with a transport error (retries
    // disabled); the loop records the failure and finishes the budget.
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(
        ScriptedBackend::new("fallback")
            .rule_with(
                "Choose the single next action",
                vec![
                    ScriptedReply::Text(r#"{"action":"wait","parameters":{}}"#.into()),
                    ScriptedReply::Text(r#"{"action":"wait","parameters":{}}"#.into()),
                    ScriptedReply::TransportError("model briefly unreachable".into()),
                    ScriptedReply::Text(r#"{"action":"wait","parameters":{}}"#.into()),
                ],
            )
            .rule(
                "Summarize what happened",
                [r#"{"outcome":"success","description":"waited","context":""}"#],
            )
            .rule(
                "its outcome reflect",
                ["patient observation reflects curiosity"],
            ),
    );
    let cfg = test_config("MAX_ITERATIONS=10\nLLM_MAX_ATTEMPTS=1\n");
    let (report, _) = run_session(
        cfg,
        backend,
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );

    assert_eq!(report.iterations.len(), 10);
    assert_eq!(report.stop_reason, StopReason::DurationElapsed);
    let failed = &report.iterations[2];
    assert_eq!(failed.index, 3);
    assert_eq!(failed.outcome, Outcome::Failure);
    assert!(failed.error.as_deref().unwrap().contains("planning failed"));
    for (i, record) in report.iterations.iter().enumerate() {
        if i != 2 {
            assert_eq!(record.outcome, Outcome::Success, "iteration {}", i + 1);
        }
    }

    // Conservation holds across the fault.
    let store =
        MemoryStore::open(dir.path(), "looper", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    assert_eq!(store.memory_count(), 10);
}

#[test]
fn no_gateway_calls_before_start_signal() {
    let dir = tempfile::tempdir().unwrap();
    let backend = scripted_backend();
    let probe = Arc::clone(&backend);
    let cfg = test_config("MAX_ITERATIONS=1\n");
    let options = ServeOptions {
        start_delay: Some(Duration::from_millis(400)),
        ..ServeOptions::default()
    };

    let dir_path = dir.path().to_path_buf();
    let runner =
        std::thread::spawn(move || run_session(cfg, backend, &dir_path, "open-room", options));
    // The environment is holding back the start signal; the agent must not
    // have touched the model yet.
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(probe.calls(), 0, "gateway used before start signal");
    let (report, _) = runner.join().unwrap();
    assert_eq!(report.iterations.len(), 1);
    assert!(probe.calls() > 0);
}

#[test]
fn env_disconnect_ends_run_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = test_config("MAX_ITERATIONS=50\n");
    let options = ServeOptions {
        close_after_actions: Some(2),
        ..ServeOptions::default()
    };
    let (report, _) = run_session(cfg, scripted_backend(), dir.path(), "open-room", options);
    assert_eq!(report.stop_reason, StopReason::EnvDisconnect);
    // The disconnect lands mid-iteration-2 (between its feedback and the
    // post-action status), so only iteration 1 completed; conservation
    // still holds between the report and the store.
    assert_eq!(report.iterations.len(), 1);
    let store =
        MemoryStore::open(dir.path(), "looper", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    assert_eq!(store.memory_count(), 1);
}

#[test]
fn report_file_round_trips_and_redacts_secrets() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("run.report.jsonl");
    let mut cfg = test_config("MAX_ITERATIONS=3\nOPENAI_API_KEY=sk-super-secret-123\n");
    cfg = load_config_from_str(&cfg.to_env_text(), &BTreeMap::new()).unwrap();

    let env = Arc::new(EnvHarness::new(
        parse_scenario(builtin_scenario("open-room").unwrap()).unwrap(),
    ));
    let (addr_tx, addr_rx) = mpsc::channel();
    let mut harness = harness_with(&cfg, scripted_backend(), dir.path(), addr_tx);
    harness.report_path = Some(report_path.clone());

    let env_for_thread = Arc::clone(&env);
    let env_thread = std::thread::spawn(move || {
        let addr = addr_rx.recv_timeout(Duration::from_secs(10)).unwrap();
        env_for_thread.serve(&addr.to_string())
    });
    let report = run(&cfg, &harness).unwrap();
    env_thread.join().unwrap().unwrap();

    let text = std::fs::read_to_string(&report_path).unwrap();
    assert_eq!(text.lines().count(), report.iterations.len() + 1);
    let parsed = parse_report(&text).unwrap();
    assert_eq!(parsed, report);
    assert!(!text.contains("sk-super-secret-123"));
}

#[test]
fn objective_triggers_decomposition_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(
        ScriptedBackend::new("fallback")
            .rule("Break the objective into", [r#"["step east once","descend the stairs"]"#])
            .rule(
                "Choose the single next action",
                [r#"{"action":"move","parameters":{"dir":"east"},"rationale":"toward exit"}"#],
            )
            .rule(
                "Summarize what happened",
                [r#"{"outcome":"success","description":"stepped east","context":"closer to exit"}"#],
            )
            .rule("its outcome reflect", ["steady progress reflects curiosity"]),
    );
    let cfg = test_config("MAX_ITERATIONS=2\nREFENV_TASK=reach the exit\n");
    let (report, _) = run_session(
        cfg,
        backend.clone(),
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );

    assert_eq!(report.iterations.len(), 2);
    let log = backend.call_log();
    let decompositions = log
        .iter()
        .filter(|r| r.prompt.contains("Break the objective into"))
        .count();
    assert_eq!(decompositions, 1, "one decomposition for a healthy run");
    // Both executed plans are steps under the decomposed objective.
    for record in &report.iterations {
        let plan = record.plan.as_ref().unwrap();
        assert_eq!(plan.mode, quirk::planner::PlanMode::TopDownStep);
        assert!(plan.objective_ref.is_some());
    }
    assert_eq!(
        report.iterations[0]
            .plan
            .as_ref()
            .unwrap()
            .objective_ref
            .as_ref()
            .unwrap()
            .sub_task_index,
        0
    );
    assert_eq!(
        report.iterations[1]
            .plan
            .as_ref()
            .unwrap()
            .objective_ref
            .as_ref()
            .unwrap()
            .sub_task_index,
        1,
        "success advances to the next sub-task"
    );
}

#[test]
fn invalid_plan_is_revised_before_execution() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(
        ScriptedBackend::new("fallback")
            .rule(
                "Choose the single next action",
                [r#"{"action":"fly","parameters":{},"rationale":"impossible"}"#],
            )
            .rule("REJECTED PLAN", [r#"{"action":"wait","parameters":{}}"#])
            .rule(
                "Summarize what happened",
                [r#"{"outcome":"success","description":"waited","context":""}"#],
            )
            .rule(
                "its outcome reflect",
                ["caution shows in the careful retry"],
            ),
    );
    let cfg = test_config("MAX_ITERATIONS=1\n");
    let (report, env) = run_session(
        cfg,
        backend,
        dir.path(),
        "open-room",
        ServeOptions::default(),
    );
    assert_eq!(report.iterations.len(), 1);
    let plan = report.iterations[0].plan.as_ref().unwrap();
    assert_eq!(plan.action, "wait");
    // The revised plan is what reached the environment.
    let stats = verify_transcript(&env.transcript()).unwrap();
    assert_eq!(stats.actions, 1);
}

#[test]
fn code_mode_registers_and_reuses_skills() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(
        ScriptedBackend::new("fallback")
            .rule(
                "Choose the single next action",
                [r#"{"action":"survey the room","parameters":{},"rationale":"look around"}"#],
            )
            .rule("Write a script", ["```\nwait\n```"])
            .rule("for a skill library index", ["survey the room by waiting"])
            .rule(
                "Summarize what happened",
                [r#"{"outcome":"success","description":"surveyed","context":""}"#],
            )
            .rule("its outcome reflect", ["surveying reflects curiosity"]),
    );
    let cfg = test_config("MAX_ITERATIONS=2\nIS_PLAN_TO_CODE=true\nCODE_MODEL_NAME=scripted\n");

    let env = Arc::new(EnvHarness::new(
        parse_scenario(builtin_scenario("open-room").unwrap()).unwrap(),
    ));
    let (addr_tx, addr_rx) = mpsc::channel();
    let mut harness = harness_with(&cfg, backend.clone(), dir.path(), addr_tx);
    harness.code_executor = Some(Arc::new(env.dsl_executor()));

    let env_for_thread = Arc::clone(&env);
    let env_thread = std::thread::spawn(move || {
        let addr = addr_rx.recv_timeout(Duration::from_secs(10)).unwrap();
        env_for_thread.serve(&addr.to_string())
    });
    let report = run(&cfg, &harness).unwrap();
    env_thread.join().unwrap().unwrap();

    assert_eq!(report.iterations.len(), 2);
    let store =
        MemoryStore::open(dir.path(), "looper", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    // Three seeded basics plus the synthesized skill.
    assert_eq!(store.skill_count(), 4);
    let synthesized = store.get_skill("survey_the_room").unwrap();
    assert_eq!(synthesized.body, "wait");

    // Mechanism exclusivity: no ACTION frames in code mode.
    let stats = verify_transcript(&env.transcript()).unwrap();
    assert_eq!(stats.actions, 0);
    assert_eq!(stats.get_status, 2);

    // The second iteration's code prompt includes the skill registered by
    // the first (retrieved by description similarity).
    let code_prompts: Vec<String> = backend
        .call_log()
        .iter()
        .filter(|r| r.prompt.contains("Write a script"))
        .map(|r| r.prompt.clone())
        .collect();
    assert_eq!(code_prompts.len(), 2);
    assert!(code_prompts[1].contains("survey the room by waiting"));
}

#[test]
fn unparsable_summaries_fall_back_without_killing_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    // Plans parse; summaries never do. Every iteration should fall back to
    // a synthesized failure summary and the loop should finish its budget.
    let backend = Arc::new(
        ScriptedBackend::new("fallback")
            .rule("Summarize what happened", ["this is not a summary object"])
            .rule("its outcome reflect", ["the trait shows"])
            .rule(
                "Choose the single next action",
                [r#"{"action":"wait","parameters":{},"rationale":"idle"}"#],
            ),
    );
    let cfg = common::test_config("fallbacks", "MAX_ITERATIONS=3\n");
    let (report, _) = run_session(cfg, backend, dir.path(), "open-room", ServeOptions::default());

    assert_eq!(report.iterations.len(), 3);
    for record in &report.iterations {
        assert_eq!(record.outcome, Outcome::Failure);
    }
    let store =
        MemoryStore::open(dir.path(), "fallbacks", Arc::new(HashEmbedder::new(0, 64))).unwrap();
    assert_eq!(store.memory_count(), 3);
    // The fallback summary is what reached the store.
    let first = store.get_memory(&report.iterations[0].memory_id).unwrap();
    assert!(first.context.is_empty());
    assert_eq!(first.outcome, Outcome::Failure);
}
