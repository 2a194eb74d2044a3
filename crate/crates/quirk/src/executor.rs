//! Translate validated plans into game interactions.
//!
//! Exactly one mechanism carries interactions in a run, chosen by
//! configuration: Plan-to-Parameters serializes the plan into a structured
//! payload for the environment's action API, Plan-to-Code synthesizes a
//! script (a skill) and delegates it to a deployer-supplied
//! [`CodeExecutor`], and custom translators map plans to any other payload
//! while reusing the same socket channel.

use std::collections::BTreeMap;
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::time::Duration;

use crate::bridge::{Bridge, BridgeError, FeedbackPayload};
use crate::config::RunConfig;
use crate::gateway::{Gateway, GatewayError};
use crate::memory::{MemoryError, MemoryStore, SkillOrigin, SkillRecord};
use crate::planner::{ActionPlan, PlannerError, TemplateRole, TemplateStore};

/// Extra wait beyond the executor's own timeout before declaring it hung.
pub const DEFAULT_EXECUTOR_GRACE: Duration = Duration::from_secs(2);
/// Skill synthesis rounds before giving up on a plan.
pub const DEFAULT_MAX_ROUNDS: u32 = 3;
/// Shared corrective re-prompts for empty code extractions per synthesis.
pub const CODE_REPROMPTS: u32 = 2;
/// Default wall-clock budget for one generated-code run.
pub const DEFAULT_ACTION_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Template(#[from] PlannerError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("no code block in completion after {attempts} attempts")]
    EmptyCode { attempts: u32 },
    #[error("code executor did not return within {waited:?} (timeout + grace); treating as hung")]
    HungExecutor { waited: Duration },
    #[error("translator {0:?} is already registered")]
    DuplicateTranslator(String),
    #[error("unknown translator {name:?}; registered: {registered}")]
    UnknownTranslator { name: String, registered: String },
    #[error("plan serialization failed: {0}")]
    Translate(String),
}

/// What the environment reported after executing one interaction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExecutionFeedback {
    pub logs: Vec<String>,
    pub errors: Vec<String>,
    pub timed_out: bool,
    pub post_state: Option<String>,
}

impl ExecutionFeedback {
    pub fn from_payload(payload: FeedbackPayload) -> Self {
        ExecutionFeedback {
            logs: payload.logs,
            errors: payload.errors,
            timed_out: false,
            post_state: None,
        }
    }

    /// Enforce the feedback contract: a timed-out execution always carries
    /// a timeout error entry.
    pub fn normalized(mut self) -> Self {
        if self.timed_out
            && !self
                .errors
                .iter()
                .any(|e| e.to_lowercase().contains("timeout"))
        {
            self.errors
                .push("timeout: execution exceeded its budget".into());
        }
        self
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && !self.timed_out
    }
}

/// A helper program passed to the code executor, addressable by name from
/// generated code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedProgram {
    pub name: String,
    pub body: String,
}

impl NamedProgram {
    pub fn from_skill(skill: &SkillRecord) -> Self {
        NamedProgram {
            name: skill.name.clone(),
            body: skill.body.clone(),
        }
    }
}

/// Raw result of one code execution inside the game.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeExecution {
    pub observation: String,
    pub timed_out: bool,
    pub logs: Vec<String>,
    pub errors: Vec<String>,
}

/// The deployer-supplied contract that runs generated code inside the game
/// and reports an observation plus execution metadata. Implementations own
/// the code's interpretation; the framework treats it as opaque text.
pub trait CodeExecutor: Send + Sync {
    fn execute(&self, code: &str, programs: &[NamedProgram], timeout: Duration) -> CodeExecution;
}

/// Which translation mechanism a run uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranslatorKind {
    PlanToParameters,
    PlanToCode,
    Custom(String),
}

impl TranslatorKind {
    /// Resolve the active mechanism from configuration: `IS_PLAN_TO_CODE`
    /// selects code mode; otherwise a `TRANSLATOR` game param selects a
    /// registered custom translator; otherwise Plan-to-Parameters.
    pub fn from_config(
        cfg: &RunConfig,
        registry: &TranslatorRegistry,
    ) -> Result<Self, ExecutorError> {
        if cfg.is_plan_to_code {
            return Ok(TranslatorKind::PlanToCode);
        }
        match cfg.game_param("TRANSLATOR") {
            None => Ok(TranslatorKind::PlanToParameters),
            Some(name) => {
                if registry.get(name).is_some() {
                    Ok(TranslatorKind::Custom(name.to_string()))
                } else {
                    Err(ExecutorError::UnknownTranslator {
                        name: name.to_string(),
                        registered: registry.names().join(", "),
                    })
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Plan-to-Parameters
// ---------------------------------------------------------------------------

/// Serializes plans into the environment's action payload. The default is
/// the plan schema itself; a rename map (loaded from a `from<TAB>to` file)
/// adapts parameter keys to a game's API without code changes.
#[derive(Debug, Clone, Default)]
pub struct ParamTranslator {
    rename: BTreeMap<String, String>,
}

impl ParamTranslator {
    pub fn new() -> Self {
        ParamTranslator::default()
    }

    pub fn from_rename_tsv(text: &str) -> Result<Self, ExecutorError> {
        let mut rename = BTreeMap::new();
        for raw in text.lines() {
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (from, to) = raw
                .split_once('\t')
                .ok_or_else(|| ExecutorError::Translate(format!("bad rename row {raw:?}")))?;
            rename.insert(from.trim().to_string(), to.trim().to_string());
        }
        Ok(ParamTranslator { rename })
    }

    pub fn from_rename_file(path: &std::path::Path) -> Result<Self, ExecutorError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ExecutorError::Translate(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_rename_tsv(&text)
    }

    /// `{"action": ..., "parameters": {...}}` with any configured key
    /// renames applied.
    pub fn translate(&self, plan: &ActionPlan) -> Result<String, ExecutorError> {
        let mut parameters = serde_json::Map::new();
        for (key, value) in &plan.parameters {
            let key = self.rename.get(key).unwrap_or(key);
            parameters.insert(key.clone(), value.clone());
        }
        serde_json::to_string(&serde_json::json!({
            "action": plan.action,
            "parameters": parameters,
        }))
        .map_err(|e| ExecutorError::Translate(e.to_string()))
    }
}

/// Default Plan-to-Parameters serialization.
pub fn translate_to_parameters(plan: &ActionPlan) -> Result<String, ExecutorError> {
    ParamTranslator::new().translate(plan)
}

/// Send a plan over the bridge and collect feedback plus a fresh post-state.
pub fn execute_plan(
    plan: &ActionPlan,
    bridge: &mut Bridge,
    translator: &ParamTranslator,
) -> Result<ExecutionFeedback, ExecutorError> {
    let payload = translator.translate(plan)?;
    execute_payload(&payload, bridge)
}

/// As [`execute_plan`] for an already-serialized payload (custom
/// translators reuse this channel).
pub fn execute_payload(
    payload: &str,
    bridge: &mut Bridge,
) -> Result<ExecutionFeedback, ExecutorError> {
    let fb = bridge.act_and_feedback(payload)?;
    let post_state = bridge.get_status()?;
    let mut feedback = ExecutionFeedback::from_payload(fb);
    feedback.post_state = Some(post_state);
    Ok(feedback.normalized())
}

// ---------------------------------------------------------------------------
// Custom translators
// ---------------------------------------------------------------------------

type TranslateFn = Box<dyn Fn(&ActionPlan) -> Result<String, String> + Send + Sync>;

/// Named plan-to-payload handlers selectable via configuration.
#[derive(Default)]
pub struct TranslatorRegistry {
    handlers: BTreeMap<String, TranslateFn>,
}

impl TranslatorRegistry {
    pub fn new() -> Self {
        TranslatorRegistry::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        handler: impl Fn(&ActionPlan) -> Result<String, String> + Send + Sync + 'static,
    ) -> Result<(), ExecutorError> {
        let name = name.into();
        if self.handlers.contains_key(&name) {
            return Err(ExecutorError::DuplicateTranslator(name));
        }
        self.handlers.insert(name, Box::new(handler));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TranslateFn> {
        self.handlers.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.handlers.keys().cloned().collect()
    }

    pub fn translate(&self, name: &str, plan: &ActionPlan) -> Result<String, ExecutorError> {
        let handler = self
            .get(name)
            .ok_or_else(|| ExecutorError::UnknownTranslator {
                name: name.to_string(),
                registered: self.names().join(", "),
            })?;
        handler(plan).map_err(ExecutorError::Translate)
    }
}

// ---------------------------------------------------------------------------
// Plan-to-Code
// ---------------------------------------------------------------------------

/// Pull the contents of the first fenced code block out of a completion.
fn extract_fenced(text: &str) -> Option<String> {
    let start = text.find("```")?;
    let after_fence = &text[start + 3..];
    // Skip an optional language tag on the fence line.
    let body_start = after_fence.find('\n')? + 1;
    let body = &after_fence[body_start..];
    let end = body.find("```")?;
    let code = body[..end].trim_end().to_string();
    if code.trim().is_empty() {
        None
    } else {
        Some(code)
    }
}

fn skills_section(skills: &[SkillRecord]) -> String {
    if skills.is_empty() {
        return "none yet".to_string();
    }
    skills
        .iter()
        .map(|s| format!("### {}: {}\n```\n{}\n```", s.name, s.description, s.body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Shared re-prompt budget for empty code extractions within one synthesis.
#[derive(Debug)]
pub struct CodeRepromptBudget {
    remaining: u32,
}

impl CodeRepromptBudget {
    pub fn new() -> Self {
        CodeRepromptBudget {
            remaining: CODE_REPROMPTS,
        }
    }
}

impl Default for CodeRepromptBudget {
    fn default() -> Self {
        Self::new()
    }
}

fn complete_code_with_extraction(
    mut prompt: String,
    gateway: &Gateway,
    budget: &mut CodeRepromptBudget,
) -> Result<String, ExecutorError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let reply = gateway.complete_code(&prompt)?.text;
        if let Some(code) = extract_fenced(&reply) {
            return Ok(code);
        }
        if budget.remaining == 0 {
            return Err(ExecutorError::EmptyCode { attempts });
        }
        budget.remaining -= 1;
        prompt = format!(
            "{prompt}\n\nYour previous reply contained no code block. Reply with one \
             fenced code block containing only the script."
        );
    }
}

/// Ask the code model for a script realizing the plan, grounded in the
/// game's API guide and the retrieved skills.
pub fn translate_to_code(
    plan: &ActionPlan,
    related_skills: &[SkillRecord],
    game_spec: &str,
    templates: &TemplateStore,
    gateway: &Gateway,
    budget: &mut CodeRepromptBudget,
) -> Result<String, ExecutorError> {
    let vars: BTreeMap<&str, String> = BTreeMap::from([
        (
            "plan",
            serde_json::to_string(plan).unwrap_or_else(|_| plan.description()),
        ),
        ("skills", skills_section(related_skills)),
        ("game_spec", game_spec.to_string()),
    ]);
    let prompt = templates.render(TemplateRole::CodeGeneration, &vars)?;
    complete_code_with_extraction(prompt, gateway, budget)
}

#[allow(clippy::too_many_arguments)]
fn refine_code(
    plan: &ActionPlan,
    previous_code: &str,
    feedback: &ExecutionFeedback,
    related_skills: &[SkillRecord],
    game_spec: &str,
    templates: &TemplateStore,
    gateway: &Gateway,
    budget: &mut CodeRepromptBudget,
) -> Result<String, ExecutorError> {
    let vars: BTreeMap<&str, String> = BTreeMap::from([
        (
            "plan",
            serde_json::to_string(plan).unwrap_or_else(|_| plan.description()),
        ),
        ("code", previous_code.to_string()),
        ("logs", feedback.logs.join("\n")),
        ("errors", feedback.errors.join("\n")),
        ("skills", skills_section(related_skills)),
        ("game_spec", game_spec.to_string()),
    ]);
    let prompt = templates.render(TemplateRole::CodeRefinement, &vars)?;
    complete_code_with_extraction(prompt, gateway, budget)
}

/// Delegate code to the executor under a watchdog: if the executor does not
/// return within `timeout + grace` the run is declared hung. The returned
/// feedback is normalized (timeout entries present when timed out).
pub fn run_and_feedback(
    code: &str,
    programs: &[NamedProgram],
    timeout: Duration,
    executor: &Arc<dyn CodeExecutor>,
    grace: Duration,
) -> Result<(String, ExecutionFeedback), ExecutorError> {
    let (tx, rx) = std::sync::mpsc::channel();
    let executor = Arc::clone(executor);
    let code = code.to_string();
    let programs = programs.to_vec();
    // Detached on purpose: a hung executor must not hang the agent. The
    // thread dies with the process after the run aborts.
    std::thread::spawn(move || {
        let result = executor.execute(&code, &programs, timeout);
        let _ = tx.send(result);
    });
    let waited = timeout + grace;
    match rx.recv_timeout(waited) {
        Ok(execution) => {
            let feedback = ExecutionFeedback {
                logs: execution.logs,
                errors: execution.errors,
                timed_out: execution.timed_out,
                post_state: Some(execution.observation.clone()),
            }
            .normalized();
            Ok((execution.observation, feedback))
        }
        Err(RecvTimeoutError::Timeout) => Err(ExecutorError::HungExecutor { waited }),
        Err(RecvTimeoutError::Disconnected) => {
            Err(ExecutorError::Translate("code executor panicked".into()))
        }
    }
}

/// How one synthesis attempt ended.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    /// Clean execution: the skill is registered and reusable.
    Registered {
        skill: SkillRecord,
        rounds: u32,
        feedback: ExecutionFeedback,
    },
    /// All rounds failed; the error history feeds the failure memory.
    Failed {
        rounds: u32,
        error_history: Vec<String>,
        last_feedback: Option<ExecutionFeedback>,
    },
}

/// Settings for one synthesize-and-register cycle.
pub struct SynthesisSettings<'a> {
    pub game_spec: &'a str,
    pub templates: &'a TemplateStore,
    pub max_rounds: u32,
    pub timeout: Duration,
    pub grace: Duration,
    pub retrieval_k: usize,
}

fn sanitize_skill_name(action: &str) -> String {
    let mut name: String = action
        .trim()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    while name.contains("__") {
        name = name.replace("__", "_");
    }
    let name = name.trim_matches('_').to_string();
    if name.is_empty() {
        "skill".to_string()
    } else {
        name
    }
}

fn describe_skill(plan: &ActionPlan, code: &str, gateway: &Gateway) -> String {
    let prompt = format!(
        "Describe in one sentence what this script does, for a skill library index.\n\n\
         PLAN\n{}\n\nSCRIPT\n{code}\n\nReply with one sentence of plain text.",
        plan.description()
    );
    match gateway.complete_instruction(&prompt) {
        Ok(result) if !result.text.trim().is_empty() => result.text.trim().to_string(),
        _ => plan.description(),
    }
}

/// Optional plan post-condition: when the plan carries a `post_check`
/// parameter, the observation must contain that string for the round to
/// count as a success.
fn post_check_passes(plan: &ActionPlan, observation: &str) -> bool {
    match plan.parameters.get("post_check").and_then(|v| v.as_str()) {
        Some(needle) => observation.contains(needle),
        None => true,
    }
}

/// The transitive dependency closure of the retrieved skills, so generated
/// code can call a helper that itself calls helpers.
fn programs_with_dependencies(store: &MemoryStore, roots: &[SkillRecord]) -> Vec<NamedProgram> {
    let mut out: Vec<NamedProgram> = Vec::new();
    let mut queue: Vec<String> = roots.iter().map(|s| s.name.clone()).collect();
    let mut seen: Vec<String> = Vec::new();
    while let Some(name) = queue.pop() {
        if seen.contains(&name) {
            continue;
        }
        seen.push(name.clone());
        if let Some(skill) = store.get_skill(&name) {
            out.push(NamedProgram::from_skill(skill));
            queue.extend(skill.dependencies.iter().cloned());
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Generate, run, and refine code for a plan until it executes cleanly,
/// then register the script as a reusable skill. Exhausted rounds are a
/// failure result, not an error: the loop records them and moves on.
pub fn synthesize_skill(
    plan: &ActionPlan,
    store: &mut MemoryStore,
    executor: &Arc<dyn CodeExecutor>,
    gateway: &Gateway,
    settings: &SynthesisSettings<'_>,
) -> Result<SynthesisOutcome, ExecutorError> {
    assert!(settings.max_rounds >= 1, "max_rounds must be >= 1");

    let hits = store.retrieve_skills(&plan.description(), settings.retrieval_k)?;
    let related: Vec<SkillRecord> = hits
        .iter()
        .filter_map(|h| store.get_skill(&h.id).cloned())
        .collect();
    let programs = programs_with_dependencies(store, &related);

    let mut budget = CodeRepromptBudget::new();
    let mut error_history: Vec<String> = Vec::new();
    let mut last: Option<(String, ExecutionFeedback)> = None;

    for round in 1..=settings.max_rounds {
        let code = match &last {
            None => translate_to_code(
                plan,
                &related,
                settings.game_spec,
                settings.templates,
                gateway,
                &mut budget,
            )?,
            Some((prev_code, prev_feedback)) => refine_code(
                plan,
                prev_code,
                prev_feedback,
                &related,
                settings.game_spec,
                settings.templates,
                gateway,
                &mut budget,
            )?,
        };

        let (observation, feedback) =
            run_and_feedback(&code, &programs, settings.timeout, executor, settings.grace)?;

        if feedback.is_clean() && post_check_passes(plan, &observation) {
            let description = describe_skill(plan, &code, gateway);
            let dependencies: Vec<String> = related
                .iter()
                .filter(|s| code.contains(s.name.as_str()))
                .map(|s| s.name.clone())
                .collect();
            let skill = SkillRecord {
                name: sanitize_skill_name(&plan.action),
                description: description.clone(),
                body: code,
                dependencies,
                origin: SkillOrigin::Synthesized,
                refinement_count: round - 1,
                description_embedding: store.embed(&description)?,
            };
            store.store_skill(skill.clone())?;
            let stored = store
                .get_skill(&skill.name)
                .cloned()
                .expect("skill stored above");
            return Ok(SynthesisOutcome::Registered {
                skill: stored,
                rounds: round,
                feedback,
            });
        }

        error_history.push(format!(
            "round {round}: errors=[{}] timed_out={}",
            feedback.errors.join("; "),
            feedback.timed_out
        ));
        last = Some((code, feedback));
    }

    Ok(SynthesisOutcome::Failed {
        rounds: settings.max_rounds,
        error_history,
        last_feedback: last.map(|(_, fb)| fb),
    })
}
