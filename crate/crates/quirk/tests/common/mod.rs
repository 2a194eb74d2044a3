//! Shared wiring for integration tests: a scripted gateway with plausible
//! refenv replies, and a one-call session runner against an in-process
//! reference environment.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use quirk::config::{load_config_from_str, RunConfig};
use quirk::gateway::ScriptedBackend;
use quirk::refenv::{builtin_scenario, parse_scenario, EnvHarness, ServeOptions};
use quirk::session::{build_harness, run, BackendPair, HarnessOptions, RunReport, SessionHarness};

pub fn test_config(agent: &str, extra: &str) -> RunConfig {
    let text = format!(
        "GAME_SUBJECT=refenv\nPERSONALITY=curiosity\nAGENT_NAME={agent}\n\
         EXP_DURATION=5\nLLM_BACKOFF_MS=1\n{extra}"
    );
    load_config_from_str(&text, &BTreeMap::new()).unwrap()
}

/// Scripted rules producing a plausible wait-and-observe loop.
pub fn scripted_backend() -> Arc<ScriptedBackend> {
    Arc::new(
        ScriptedBackend::new("fallback")
            .rule(
                "Summarize what happened",
                [r#"{"outcome":"success","description":"waited and observed","context":"nothing moved"}"#],
            )
            .rule("its outcome reflect", ["observing quietly reflects the trait"])
            .rule(
                "Choose the single next action",
                [r#"{"action":"wait","parameters":{},"rationale":"observe first"}"#],
            )
            .rule("Break the objective into", [r#"["walk to the exit","descend"]"#]),
    )
}

pub fn harness_with(
    cfg: &RunConfig,
    backend: Arc<ScriptedBackend>,
    memory_root: &std::path::Path,
    addr_tx: mpsc::Sender<std::net::SocketAddr>,
) -> SessionHarness {
    let mut harness = build_harness(
        cfg,
        HarnessOptions {
            memory_root: memory_root.to_path_buf(),
            backend_override: Some(BackendPair {
                instruction: backend.clone(),
                code: Some(backend),
            }),
            bind_override: Some(("127.0.0.1".into(), 0)),
            ..HarnessOptions::default()
        },
    )
    .unwrap();
    harness.on_listening = Some(Box::new(move |addr| {
        let _ = addr_tx.send(addr);
    }));
    harness
}

/// Run a session against an in-process environment; returns the report and
/// the environment harness (for transcript checks).
pub fn run_session(
    cfg: RunConfig,
    backend: Arc<ScriptedBackend>,
    memory_root: &std::path::Path,
    scenario: &str,
    options: ServeOptions,
) -> (RunReport, Arc<EnvHarness>) {
    run_session_with(cfg, backend, memory_root, scenario, options, |_, _| {})
}

/// As [`run_session`], with a hook that can adjust the harness (code
/// executors, report paths) and reach the environment before the run.
pub fn run_session_with(
    cfg: RunConfig,
    backend: Arc<ScriptedBackend>,
    memory_root: &std::path::Path,
    scenario: &str,
    options: ServeOptions,
    tweak: impl FnOnce(&mut SessionHarness, &Arc<EnvHarness>),
) -> (RunReport, Arc<EnvHarness>) {
    let env = Arc::new(EnvHarness::new(
        parse_scenario(builtin_scenario(scenario).unwrap()).unwrap(),
    ));
    let (addr_tx, addr_rx) = mpsc::channel();
    let mut harness = harness_with(&cfg, backend, memory_root, addr_tx);
    tweak(&mut harness, &env);

    let env_for_thread = Arc::clone(&env);
    let env_thread = std::thread::spawn(move || {
        let addr = addr_rx
            .recv_timeout(Duration::from_secs(10))
            .expect("bridge address");
        env_for_thread.serve_with(&addr.to_string(), options)
    });

    let report = run(&cfg, &harness).expect("session runs");
    drop(harness);
    let _ = env_thread.join().expect("env thread");
    (report, env)
}
