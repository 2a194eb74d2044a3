//! The runner: wire config, bridge, memory, planner, executor, and
//! summarizer into the iterative loop, own the session lifecycle, and emit
//! the run report.
//!
//! Loop shape per iteration: fetch state, retrieve memories, plan (with
//! validation and revision), execute through the configured mechanism,
//! summarize, derive the preference summary, store one memory record.
//! A planner, executor, or summarizer failure marks the iteration failed
//! and the loop continues; bridge disconnects and persistence failures end
//! the run with a report. Exactly one memory record is stored per completed
//! iteration, so records added always equals iterations run.

mod build;
mod report;

pub use build::{build_gateway, build_harness, BackendPair, HarnessOptions, REFENV_BASIC_SKILLS};
pub use report::{parse_report, write_report, IterationRecord, RunReport, StopReason};

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use crate::bridge::{self, Bridge, BridgeConfig, BridgeError};
use crate::config::RunConfig;
use crate::executor::{
    self, CodeExecutor, ExecutionFeedback, ExecutorError, ParamTranslator, SynthesisOutcome,
    SynthesisSettings, TranslatorKind, TranslatorRegistry,
};
use crate::gateway::{Gateway, GatewaySettings};
use crate::memory::{
    self, Embedder, MemoryError, MemoryRecord, MemoryStore, Outcome, SkillOrigin, SkillRecord,
};
use crate::personality::PersonalityProfile;
use crate::planner::{
    CapabilitySet, ChosenMode, Planner, PlannerContext, PlannerParams, RetrievedMemory,
    TemplateStore, Verdict,
};
use crate::summarizer::{fallback_preference, ExecutionSummary, Summarizer};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Personality(#[from] crate::personality::PersonalityError),
    #[error(transparent)]
    Planner(#[from] crate::planner::PlannerError),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("basic skill {path}: {reason}")]
    BadSkillFile { path: String, reason: String },
    #[error("missing {what}; {hint}")]
    MissingInput {
        what: &'static str,
        hint: &'static str,
    },
}

/// Everything the runner needs beyond the config: model access, prompt
/// data, and game-specific registries. Tests assemble this directly; the
/// CLI builds it from files.
pub struct SessionHarness {
    pub gateway: Gateway,
    pub embedder: Arc<dyn Embedder>,
    pub templates: TemplateStore,
    pub profile: PersonalityProfile,
    /// The profile text after entity mapping; injected verbatim into
    /// planning prompts.
    pub personality_prompt: String,
    pub capabilities: CapabilitySet,
    pub translators: TranslatorRegistry,
    pub param_translator: ParamTranslator,
    pub code_executor: Option<Arc<dyn CodeExecutor>>,
    pub game_spec: String,
    pub basic_skills_dir: Option<PathBuf>,
    /// Seed skills provided inline (name, seed-file text); used when no
    /// skills directory is configured.
    pub basic_skill_texts: Vec<(String, String)>,
    pub memory_root: PathBuf,
    /// Bind here instead of the configured host/port (tests use port 0).
    pub bind_override: Option<(String, u16)>,
    /// Called with the bound address once the bridge is listening, before
    /// the blocking accept; lets a caller start the environment side.
    pub on_listening: Option<Box<dyn Fn(std::net::SocketAddr) + Send + Sync>>,
    pub report_path: Option<PathBuf>,
}

impl SessionHarness {
    pub fn new(
        gateway: Gateway,
        embedder: Arc<dyn Embedder>,
        templates: TemplateStore,
        profile: PersonalityProfile,
        personality_prompt: String,
        capabilities: CapabilitySet,
        memory_root: PathBuf,
    ) -> Self {
        SessionHarness {
            gateway,
            embedder,
            templates,
            profile,
            personality_prompt,
            capabilities,
            translators: TranslatorRegistry::new(),
            param_translator: ParamTranslator::new(),
            code_executor: None,
            game_spec: String::new(),
            basic_skills_dir: None,
            basic_skill_texts: Vec::new(),
            memory_root,
            bind_override: None,
            on_listening: None,
            report_path: None,
        }
    }
}

/// Whether the loop should run another iteration. Checked at iteration
/// boundaries only; an in-flight action always completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

pub fn stop_check(started: Instant, exp_duration: Duration, now: Instant) -> StopDecision {
    if now.duration_since(started) >= exp_duration {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Gateway retry/sampling settings from config, with documented game-param
/// overrides (LLM_MAX_ATTEMPTS, LLM_BACKOFF_MS, LLM_MAX_TOKENS).
pub fn gateway_settings_from(cfg: &RunConfig) -> Result<GatewaySettings, SessionError> {
    let defaults = GatewaySettings::default();
    Ok(GatewaySettings {
        max_attempts: cfg.game_param_u64("LLM_MAX_ATTEMPTS", defaults.max_attempts as u64)? as u32,
        backoff_base: Duration::from_millis(
            cfg.game_param_u64("LLM_BACKOFF_MS", defaults.backoff_base.as_millis() as u64)?,
        ),
        max_tokens: cfg.game_param_u64("LLM_MAX_TOKENS", defaults.max_tokens as u64)? as u32,
        ..defaults
    })
}

/// Planner bounds from config (PLANNER_REPARSE, PLANNER_REVISE,
/// MODE_SWITCH_STREAK).
pub fn planner_params_from(cfg: &RunConfig) -> Result<PlannerParams, SessionError> {
    let defaults = PlannerParams::default();
    Ok(PlannerParams {
        mode_switch_streak: cfg
            .game_param_u64("MODE_SWITCH_STREAK", defaults.mode_switch_streak as u64)?
            as u32,
        reparse_attempts: cfg.game_param_u64("PLANNER_REPARSE", defaults.reparse_attempts as u64)?
            as u32,
        revision_rounds: cfg.game_param_u64("PLANNER_REVISE", defaults.revision_rounds as u64)?
            as u32,
    })
}

struct SkillSeed {
    name: String,
    description: String,
    deps: Vec<String>,
    body: String,
}

/// Seed-file format: the script body plus `# description:` and optional
/// `# deps:` header lines.
fn parse_skill_seed(name: &str, text: &str, origin: &str) -> Result<SkillSeed, SessionError> {
    let mut description = String::new();
    let mut deps: Vec<String> = Vec::new();
    let mut body_lines = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# description:") {
            description = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("# deps:") {
            deps = rest
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        } else {
            body_lines.push(line);
        }
    }
    if description.is_empty() {
        return Err(SessionError::BadSkillFile {
            path: origin.to_string(),
            reason: "missing `# description:` header".into(),
        });
    }
    Ok(SkillSeed {
        name: name.to_string(),
        description,
        deps,
        body: body_lines.join("\n"),
    })
}

/// Store seeds, retrying ones whose dependencies appear later in the list
/// until a full pass makes no progress.
fn seed_skills(
    store: &mut MemoryStore,
    mut pending: Vec<SkillSeed>,
    origin: &str,
) -> Result<usize, SessionError> {
    pending.sort_by(|a, b| a.name.cmp(&b.name));
    let mut seeded = 0;
    while !pending.is_empty() {
        let before = pending.len();
        let mut still_pending = Vec::new();
        for seed in pending {
            let record = SkillRecord {
                name: seed.name.clone(),
                description: seed.description.clone(),
                body: seed.body.clone(),
                dependencies: seed.deps.clone(),
                origin: SkillOrigin::Basic,
                refinement_count: 0,
                description_embedding: store.embed(&seed.description)?,
            };
            match store.store_skill(record) {
                Ok(_) => seeded += 1,
                Err(MemoryError::UnknownDependency { .. }) => still_pending.push(seed),
                Err(e) => return Err(e.into()),
            }
        }
        if still_pending.len() == before {
            let names: Vec<String> = still_pending.into_iter().map(|p| p.name).collect();
            return Err(SessionError::BadSkillFile {
                path: origin.to_string(),
                reason: format!(
                    "unresolvable skill dependencies among: {}",
                    names.join(", ")
                ),
            });
        }
        pending = still_pending;
    }
    Ok(seeded)
}

/// Seed the skill library from a directory of `.skill` files. Existing
/// names are left untouched, so a continued session keeps its refined
/// skills.
pub fn seed_basic_skills(store: &mut MemoryStore, dir: &Path) -> Result<usize, SessionError> {
    let mut pending = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|source| SessionError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| SessionError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("skill") {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if store.get_skill(&name).is_some() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        pending.push(parse_skill_seed(&name, &text, &path.display().to_string())?);
    }
    seed_skills(store, pending, &dir.display().to_string())
}

/// Seed from inline (name, seed-file text) pairs.
pub fn seed_skill_texts(
    store: &mut MemoryStore,
    seeds: &[(String, String)],
) -> Result<usize, SessionError> {
    let mut pending = Vec::new();
    for (name, text) in seeds {
        if store.get_skill(name).is_some() {
            continue;
        }
        pending.push(parse_skill_seed(name, text, name)?);
    }
    seed_skills(store, pending, "<inline>")
}

fn bridge_config_from(cfg: &RunConfig) -> Result<BridgeConfig, SessionError> {
    Ok(BridgeConfig {
        status_timeout: Duration::from_secs(cfg.game_param_u64("STATUS_TIMEOUT_SECS", 30)?),
        feedback_timeout: Duration::from_secs(cfg.game_param_u64("ACTION_TIMEOUT_SECS", 120)?),
    })
}

enum IterationEnd {
    Completed(Box<IterationRecord>),
    Fatal { reason: StopReason, detail: String },
}

struct LoopState {
    planner: Planner,
    failure_streak: u32,
    translator_kind: TranslatorKind,
    action_timeout: Duration,
    executor_grace: Duration,
    synth_max_rounds: u32,
}

/// Run one full testing session. Startup failures (bad config, bind
/// failure, unusable store) are errors; anything after the environment
/// connects ends with a report instead.
pub fn run(cfg: &RunConfig, harness: &SessionHarness) -> Result<RunReport, SessionError> {
    let started = Instant::now();
    let started_ms = now_ms();

    // Fresh sessions delete everything stored under this agent name first.
    if !cfg.is_continued {
        memory::delete_collection(&harness.memory_root, &cfg.agent_name)?;
    }
    let mut store = MemoryStore::open(
        &harness.memory_root,
        &cfg.agent_name,
        harness.embedder.clone(),
    )?;
    log::info!(
        "memory collection ready: {} memories, {} skills",
        store.memory_count(),
        store.skill_count()
    );

    let translator_kind = TranslatorKind::from_config(cfg, &harness.translators)?;
    if translator_kind == TranslatorKind::PlanToCode {
        let seeded = match &harness.basic_skills_dir {
            Some(dir) => seed_basic_skills(&mut store, dir)?,
            None => seed_skill_texts(&mut store, &harness.basic_skill_texts)?,
        };
        log::info!("seeded {seeded} basic skills");
    }

    let (host, port) = harness
        .bind_override
        .clone()
        .unwrap_or_else(|| (cfg.bridge_host.clone(), cfg.bridge_port));
    let server = bridge::serve(&host, port)?;
    log::info!("bridge listening on {}", server.local_addr());
    if let Some(on_listening) = &harness.on_listening {
        on_listening(server.local_addr());
    }
    let mut bridge = server.accept(bridge_config_from(cfg)?)?;

    let mut loop_state = LoopState {
        planner: Planner::new(harness.templates.clone(), planner_params_from(cfg)?),
        failure_streak: 0,
        translator_kind,
        action_timeout: Duration::from_secs(cfg.game_param_u64("ACTION_TIMEOUT_SECS", 120)?),
        executor_grace: Duration::from_secs(cfg.game_param_u64("EXECUTOR_GRACE_SECS", 2)?),
        synth_max_rounds: cfg.game_param_u64("SYNTH_MAX_ROUNDS", 3)? as u32,
    };
    let max_iterations = cfg.game_param_u64("MAX_ITERATIONS", u64::MAX)?;

    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut stop_reason = StopReason::DurationElapsed;
    let mut stop_detail = None;

    // Block until the environment sends the start signal; no model call
    // happens before it.
    loop {
        match bridge.get_command() {
            Ok(cmd) if cmd == "b" => break,
            Ok(other) => log::info!("ignoring pre-start command {other:?}"),
            Err(e) => {
                return Ok(finish_report(
                    cfg,
                    iterations,
                    started_ms,
                    StopReason::EnvDisconnect,
                    Some(format!("before start signal: {e}")),
                    harness,
                ))
            }
        }
    }
    log::info!("start signal received");

    while (iterations.len() as u64) < max_iterations {
        if stop_check(started, cfg.exp_duration, Instant::now()) == StopDecision::Stop {
            break;
        }
        let index = iterations.len() as u64 + 1;
        match run_iteration(
            cfg,
            harness,
            &mut loop_state,
            &mut store,
            &mut bridge,
            index,
        ) {
            Ok(IterationEnd::Completed(record)) => iterations.push(*record),
            Ok(IterationEnd::Fatal { reason, detail }) => {
                stop_reason = reason;
                stop_detail = Some(detail);
                break;
            }
            Err(e) => {
                stop_reason = StopReason::FatalError;
                stop_detail = Some(e.to_string());
                break;
            }
        }
    }

    Ok(finish_report(
        cfg,
        iterations,
        started_ms,
        stop_reason,
        stop_detail,
        harness,
    ))
}

fn finish_report(
    cfg: &RunConfig,
    iterations: Vec<IterationRecord>,
    started_ms: u64,
    stop_reason: StopReason,
    stop_detail: Option<String>,
    harness: &SessionHarness,
) -> RunReport {
    let report = RunReport {
        agent_name: cfg.agent_name.clone(),
        personality: cfg.personality.clone(),
        iterations,
        started_ms,
        ended_ms: now_ms().max(started_ms),
        stop_reason,
        stop_detail,
    };
    if let Some(path) = &harness.report_path {
        if let Err(e) = write_report(&report, path) {
            log::error!("report write failed (run data persists in the store): {e}");
        }
    }
    report
}

fn fatal_from_bridge(e: &BridgeError) -> Option<(StopReason, String)> {
    match e {
        BridgeError::ConnectionClosed => Some((StopReason::EnvDisconnect, e.to_string())),
        BridgeError::Io(_) | BridgeError::Protocol { .. } => {
            Some((StopReason::FatalError, e.to_string()))
        }
        // A response timeout is recoverable; the iteration is recorded as
        // a failure and the loop decides whether the next one works.
        BridgeError::Timeout { .. } => None,
        BridgeError::Bind { .. } | BridgeError::Accept(_) => {
            Some((StopReason::FatalError, e.to_string()))
        }
    }
}

fn render_preferred(store: &MemoryStore, hits: &[memory::RetrievalHit]) -> Vec<RetrievedMemory> {
    hits.iter()
        .filter_map(|h| store.get_memory(&h.id).map(|m| (h, m)))
        .map(|(h, m)| RetrievedMemory {
            id: h.id.clone(),
            score: h.score,
            summary: m.preference_summary.clone(),
        })
        .collect()
}

fn render_related(store: &MemoryStore, hits: &[memory::RetrievalHit]) -> Vec<RetrievedMemory> {
    hits.iter()
        .filter_map(|h| store.get_memory(&h.id).map(|m| (h, m)))
        .map(|(h, m)| RetrievedMemory {
            id: h.id.clone(),
            score: h.score,
            summary: format!("[{}] {}: {}", m.outcome, m.plan_summary, m.context),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    cfg: &RunConfig,
    harness: &SessionHarness,
    loop_state: &mut LoopState,
    store: &mut MemoryStore,
    bridge: &mut Bridge,
    index: u64,
) -> Result<IterationEnd, SessionError> {
    let iter_started = Instant::now();
    let calls_before = harness.gateway.calls_made();

    let state_before = match bridge.get_status() {
        Ok(s) => s,
        Err(e) => {
            return Ok(match fatal_from_bridge(&e) {
                Some((reason, detail)) => IterationEnd::Fatal { reason, detail },
                None => IterationEnd::Fatal {
                    reason: StopReason::FatalError,
                    detail: e.to_string(),
                },
            })
        }
    };

    let preferred_hits = store.retrieve_preferred(&harness.personality_prompt, cfg.retrieval_k)?;
    let related_hits = store.retrieve_related(&state_before, cfg.retrieval_k)?;

    let mut capabilities = harness.capabilities.clone();
    if loop_state.translator_kind == TranslatorKind::PlanToCode {
        capabilities.extend_names(store.skill_names());
    }

    let ctx = PlannerContext {
        current_state: state_before.clone(),
        objective: cfg.objective().map(String::from),
        personality_prompt: harness.personality_prompt.clone(),
        preferred_memories: render_preferred(store, &preferred_hits),
        related_memories: render_related(store, &related_hits),
        capabilities,
        failure_streak: loop_state.failure_streak,
    };

    // Plan (and decompose when the mode calls for it). Failures here are
    // recoverable: the iteration is recorded as failed and the loop goes on.
    let mut budget = loop_state.planner.reparse_budget();
    let plan_result = (|| {
        if loop_state.planner.choose_mode(&ctx) == ChosenMode::TopDown {
            loop_state
                .planner
                .decompose(&ctx, &harness.gateway, &mut budget)?;
            loop_state.failure_streak = 0;
        }
        let plan = loop_state
            .planner
            .plan_next(&ctx, &harness.gateway, &mut budget)?;
        // In code mode a plan's action is free text realized by synthesized
        // code, so capability membership does not apply; execution feedback
        // drives correction instead.
        if loop_state.translator_kind == TranslatorKind::PlanToCode {
            return Ok(plan);
        }
        let verdict = Planner::validate_plan(&plan, &ctx);
        match verdict.verdict {
            Verdict::Valid => Ok(plan),
            Verdict::Revise => {
                loop_state
                    .planner
                    .revise_plan(&plan, &verdict, &ctx, &harness.gateway)
            }
        }
    })();

    let (plan, feedback, iteration_error) = match plan_result {
        Err(e) => {
            let detail = format!("planning failed: {e}");
            log::warn!("iteration {index}: {detail}");
            let feedback = ExecutionFeedback {
                logs: vec![],
                errors: vec![detail.clone()],
                timed_out: false,
                post_state: None,
            };
            (None, feedback, Some(detail))
        }
        Ok(plan) => match execute(cfg, harness, loop_state, store, bridge, &plan)? {
            Execution::Fatal { reason, detail } => {
                return Ok(IterationEnd::Fatal { reason, detail })
            }
            Execution::Feedback(feedback) => {
                let error = (!feedback.is_clean()).then(|| feedback.errors.join("; "));
                (Some(plan), feedback, error)
            }
            Execution::Failed { feedback, detail } => {
                log::warn!("iteration {index}: execution failed: {detail}");
                (Some(plan), feedback, Some(detail))
            }
        },
    };

    let state_after = feedback
        .post_state
        .clone()
        .unwrap_or_else(|| state_before.clone());

    let summarizer = Summarizer::new(harness.templates.clone());
    let fallback_plan = plan.clone().unwrap_or_else(|| crate::planner::ActionPlan {
        mode: crate::planner::PlanMode::BottomUp,
        action: "none".into(),
        parameters: serde_json::Map::new(),
        rationale: String::new(),
        objective_ref: None,
    });
    let summary: ExecutionSummary = match &plan {
        Some(plan) => summarizer
            .summarize_execution(
                plan,
                &feedback,
                &state_before,
                &state_after,
                &harness.gateway,
            )
            .unwrap_or_else(|e| {
                log::warn!("iteration {index}: summarizer fallback: {e}");
                Summarizer::fallback_summary(plan, &feedback)
            }),
        None => Summarizer::fallback_summary(&fallback_plan, &feedback),
    };

    let preference = summarizer
        .preference_summary(&summary, &harness.profile, &harness.gateway)
        .unwrap_or_else(|e| {
            log::warn!("iteration {index}: preference fallback: {e}");
            fallback_preference(summary.outcome, &harness.profile.name)
        });

    match summary.outcome {
        Outcome::Failure => loop_state.failure_streak += 1,
        Outcome::Success | Outcome::Partial => loop_state.failure_streak = 0,
    }
    loop_state.planner.advance_progress(summary.outcome);

    let memory_id = uuid::Uuid::new_v4().to_string();
    let record = MemoryRecord {
        id: memory_id.clone(),
        agent_name: cfg.agent_name.clone(),
        iteration: index,
        plan_summary: summary.plan_summary.clone(),
        outcome: summary.outcome,
        context: summary.context.clone(),
        game_state_snapshot: state_before.clone(),
        preference_summary: preference.clone(),
        state_embedding: store.embed(&state_before)?,
        preference_embedding: store.embed(&preference)?,
        created_at: now_ms(),
    };
    store.store_memory(record)?;

    Ok(IterationEnd::Completed(Box::new(IterationRecord {
        index,
        plan,
        outcome: summary.outcome,
        memory_id,
        latency_ms: iter_started.elapsed().as_millis() as u64,
        gateway_calls: harness.gateway.calls_made() - calls_before,
        error: iteration_error,
    })))
}

enum Execution {
    Feedback(ExecutionFeedback),
    Failed {
        feedback: ExecutionFeedback,
        detail: String,
    },
    Fatal {
        reason: StopReason,
        detail: String,
    },
}

fn execute(
    cfg: &RunConfig,
    harness: &SessionHarness,
    loop_state: &mut LoopState,
    store: &mut MemoryStore,
    bridge: &mut Bridge,
    plan: &crate::planner::ActionPlan,
) -> Result<Execution, SessionError> {
    match &loop_state.translator_kind {
        TranslatorKind::PlanToParameters => {
            match executor::execute_plan(plan, bridge, &harness.param_translator) {
                Ok(feedback) => Ok(Execution::Feedback(feedback)),
                Err(e) => Ok(execution_error(e)),
            }
        }
        TranslatorKind::Custom(name) => {
            let payload = match harness.translators.translate(name, plan) {
                Ok(payload) => payload,
                Err(e) => {
                    return Ok(Execution::Failed {
                        feedback: synthetic_failure(&e.to_string()),
                        detail: e.to_string(),
                    })
                }
            };
            match executor::execute_payload(&payload, bridge) {
                Ok(feedback) => Ok(Execution::Feedback(feedback)),
                Err(e) => Ok(execution_error(e)),
            }
        }
        TranslatorKind::PlanToCode => {
            let Some(code_executor) = &harness.code_executor else {
                return Ok(Execution::Fatal {
                    reason: StopReason::FatalError,
                    detail: "plan-to-code enabled but no code executor registered".into(),
                });
            };
            let settings = SynthesisSettings {
                game_spec: &harness.game_spec,
                templates: &harness.templates,
                max_rounds: loop_state.synth_max_rounds,
                timeout: loop_state.action_timeout,
                grace: loop_state.executor_grace,
                retrieval_k: cfg.retrieval_k,
            };
            match executor::synthesize_skill(
                plan,
                store,
                code_executor,
                &harness.gateway,
                &settings,
            ) {
                Ok(SynthesisOutcome::Registered {
                    skill,
                    feedback,
                    rounds,
                }) => {
                    log::info!("registered skill {:?} after {rounds} round(s)", skill.name);
                    Ok(Execution::Feedback(feedback))
                }
                Ok(SynthesisOutcome::Failed {
                    rounds,
                    error_history,
                    last_feedback,
                }) => {
                    let detail = format!(
                        "skill synthesis failed after {rounds} rounds: {}",
                        error_history.join(" | ")
                    );
                    let feedback = last_feedback.unwrap_or_else(|| synthetic_failure(&detail));
                    Ok(Execution::Failed { feedback, detail })
                }
                Err(e @ ExecutorError::HungExecutor { .. }) => Ok(Execution::Fatal {
                    reason: StopReason::FatalError,
                    detail: e.to_string(),
                }),
                Err(e) => Ok(execution_error(e)),
            }
        }
    }
}

fn execution_error(e: ExecutorError) -> Execution {
    if let ExecutorError::Bridge(bridge_err) = &e {
        if let Some((reason, detail)) = fatal_from_bridge(bridge_err) {
            return Execution::Fatal { reason, detail };
        }
    }
    let detail = e.to_string();
    Execution::Failed {
        feedback: synthetic_failure(&detail),
        detail,
    }
}

fn synthetic_failure(detail: &str) -> ExecutionFeedback {
    ExecutionFeedback {
        logs: vec![],
        errors: vec![detail.to_string()],
        timed_out: false,
        post_state: None,
    }
}
