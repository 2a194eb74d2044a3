//! Hybrid planning: produce the next action plan from state, personality,
//! and retrieved memories, with validation and revision before execution.
//!
//! Two strategies cooperate. Bottom-up planning asks the instruction model
//! for the single next action, suited to reactive and exploratory play.
//! Top-down planning decomposes a configured objective into ordered
//! sub-tasks and then plans each step under the active sub-task. The mode
//! switch is automatic: top-down whenever an objective is set and either no
//! usable decomposition exists or the failure streak crosses the
//! re-decompose threshold.

mod templates;

pub use templates::{render_template, TemplateRole, TemplateStore};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::memory::Outcome;

pub const DEFAULT_MODE_SWITCH_STREAK: u32 = 3;
pub const DEFAULT_REPARSE_ATTEMPTS: u32 = 2;
pub const DEFAULT_REVISION_ROUNDS: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("template {role}: {reason}")]
    Template { role: &'static str, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("completion unparsable after {attempts} attempts; last reply: {raw:?}")]
    Unparsable { attempts: u32, raw: String },
    #[error("decomposition produced an empty sub-task list")]
    DegenerateDecomposition,
    #[error("top-down planning requires an objective")]
    NoObjective,
    #[error("planning context has no capabilities")]
    NoCapabilities,
    #[error("revise_plan called with a valid plan")]
    NotRevisable,
    #[error("plan still invalid after {rounds} revision rounds: {history:?}")]
    RevisionExhausted { rounds: u32, history: Vec<String> },
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// What the game (plus the skill library, in code mode) lets the agent do.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CapabilitySet {
    actions: Vec<ActionSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub required_params: Vec<String>,
}

impl CapabilitySet {
    pub fn new(actions: Vec<ActionSchema>) -> Self {
        CapabilitySet { actions }
    }

    /// Parse `name<TAB>param,param` rows; the parameter list may be empty.
    pub fn from_tsv(text: &str) -> Result<Self, PlannerError> {
        let mut actions = Vec::new();
        for raw in text.lines() {
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (name, params) = raw.split_once('\t').unwrap_or((raw, ""));
            actions.push(ActionSchema {
                name: name.trim().to_string(),
                required_params: params
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(String::from)
                    .collect(),
            });
        }
        Ok(CapabilitySet { actions })
    }

    pub fn from_tsv_file(path: &std::path::Path) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path).map_err(|e| PlannerError::Template {
            role: "capabilities",
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_tsv(&text)
    }

    /// Add schema-less entries (skill names in code mode).
    pub fn extend_names<I: IntoIterator<Item = String>>(&mut self, names: I) {
        for name in names {
            if self.get(&name).is_none() {
                self.actions.push(ActionSchema {
                    name,
                    required_params: Vec::new(),
                });
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.actions.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// One line per action for prompt composition.
    pub fn describe(&self) -> String {
        self.actions
            .iter()
            .map(|a| {
                if a.required_params.is_empty() {
                    format!("- {}", a.name)
                } else {
                    format!("- {} (requires: {})", a.name, a.required_params.join(", "))
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A retrieved memory rendered for prompt injection.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedMemory {
    pub id: String,
    pub score: f64,
    pub summary: String,
}

/// Everything the planner conditions on for one iteration.
#[derive(Debug, Clone)]
pub struct PlannerContext {
    pub current_state: String,
    pub objective: Option<String>,
    pub personality_prompt: String,
    pub preferred_memories: Vec<RetrievedMemory>,
    pub related_memories: Vec<RetrievedMemory>,
    pub capabilities: CapabilitySet,
    pub failure_streak: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    BottomUp,
    TopDownStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveRef {
    pub objective_id: String,
    pub sub_task_index: usize,
}

/// The planner's output for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub mode: PlanMode,
    pub action: String,
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub rationale: String,
    pub objective_ref: Option<ObjectiveRef>,
}

impl ActionPlan {
    /// One-line description used for skill retrieval and memory summaries.
    pub fn description(&self) -> String {
        if self.rationale.is_empty() {
            self.action.clone()
        } else {
            format!("{}: {}", self.action, self.rationale)
        }
    }

    /// The wire payload shape: action plus parameters.
    pub fn payload_json(&self) -> String {
        serde_json::json!({
            "action": self.action,
            "parameters": self.parameters,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTaskStatus {
    Pending,
    Active,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub description: String,
    pub status: SubTaskStatus,
}

/// An objective broken into ordered sub-tasks; at most one is active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDecomposition {
    pub objective_id: String,
    pub objective_text: String,
    pub sub_tasks: Vec<SubTask>,
}

impl TaskDecomposition {
    pub fn new(
        objective_id: impl Into<String>,
        objective_text: impl Into<String>,
        descriptions: Vec<String>,
    ) -> Result<Self, PlannerError> {
        if descriptions.is_empty() {
            return Err(PlannerError::DegenerateDecomposition);
        }
        let sub_tasks = descriptions
            .into_iter()
            .enumerate()
            .map(|(i, description)| SubTask {
                description,
                status: if i == 0 {
                    SubTaskStatus::Active
                } else {
                    SubTaskStatus::Pending
                },
            })
            .collect();
        Ok(TaskDecomposition {
            objective_id: objective_id.into(),
            objective_text: objective_text.into(),
            sub_tasks,
        })
    }

    pub fn active_index(&self) -> Option<usize> {
        self.sub_tasks
            .iter()
            .position(|t| t.status == SubTaskStatus::Active)
    }

    /// Complete means no active and no pending sub-tasks remain.
    pub fn is_complete(&self) -> bool {
        self.sub_tasks
            .iter()
            .all(|t| matches!(t.status, SubTaskStatus::Done | SubTaskStatus::Failed))
    }
}

/// Advance a decomposition with one execution outcome: success finishes the
/// active sub-task and activates the next pending one; partial and failure
/// keep it active (failure streak handling lives with the caller).
pub fn update_progress(mut decomp: TaskDecomposition, outcome: Outcome) -> TaskDecomposition {
    let Some(active) = decomp.active_index() else {
        return decomp;
    };
    match outcome {
        Outcome::Success => {
            decomp.sub_tasks[active].status = SubTaskStatus::Done;
            if let Some(next) = decomp
                .sub_tasks
                .iter()
                .position(|t| t.status == SubTaskStatus::Pending)
            {
                decomp.sub_tasks[next].status = SubTaskStatus::Active;
            }
        }
        Outcome::Partial | Outcome::Failure => {}
    }
    decomp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChosenMode {
    BottomUp,
    TopDown,
}

/// Shared per-iteration budget for corrective re-prompts after unparsable
/// completions, drawn on by both decomposition and planning.
#[derive(Debug)]
pub struct ReparseBudget {
    remaining: u32,
}

impl ReparseBudget {
    fn try_take(&mut self) -> bool {
        if self.remaining > 0 {
            self.remaining -= 1;
            true
        } else {
            false
        }
    }
}

// ---------------------------------------------------------------------------
// Completion parsing helpers
// ---------------------------------------------------------------------------

/// Extract the first balanced JSON object or array from free-form text.
/// Models wrap structured replies in prose more often than not.
pub(crate) fn extract_json_value(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        let c = b as char;
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            c if c == open => depth += 1,
            c if c == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Deserialize)]
struct PlanWire {
    action: String,
    #[serde(default)]
    parameters: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    rationale: String,
}

fn parse_plan_completion(text: &str) -> Result<PlanWire, String> {
    let json = extract_json_value(text, '{', '}').ok_or("no JSON object found")?;
    let wire: PlanWire = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if wire.action.trim().is_empty() {
        return Err("plan has an empty action".into());
    }
    Ok(wire)
}

fn parse_subtask_completion(text: &str) -> Result<Vec<String>, String> {
    let json = extract_json_value(text, '[', ']').ok_or("no JSON array found")?;
    let items: Vec<String> = serde_json::from_str(json).map_err(|e| e.to_string())?;
    Ok(items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

// ---------------------------------------------------------------------------
// The planner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PlannerParams {
    /// Consecutive failures that force re-decomposition in top-down mode.
    pub mode_switch_streak: u32,
    /// Corrective re-prompts allowed per iteration for unparsable replies.
    pub reparse_attempts: u32,
    /// Revision rounds allowed per plan.
    pub revision_rounds: u32,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            mode_switch_streak: DEFAULT_MODE_SWITCH_STREAK,
            reparse_attempts: DEFAULT_REPARSE_ATTEMPTS,
            revision_rounds: DEFAULT_REVISION_ROUNDS,
        }
    }
}

pub struct Planner {
    templates: TemplateStore,
    params: PlannerParams,
    decomposition: Option<TaskDecomposition>,
}

impl Planner {
    pub fn new(templates: TemplateStore, params: PlannerParams) -> Self {
        Planner {
            templates,
            params,
            decomposition: None,
        }
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    pub fn decomposition(&self) -> Option<&TaskDecomposition> {
        self.decomposition.as_ref()
    }

    /// Fresh re-prompt budget for one loop iteration.
    pub fn reparse_budget(&self) -> ReparseBudget {
        ReparseBudget {
            remaining: self.params.reparse_attempts,
        }
    }

    /// Deterministic mode choice: top-down when an objective is set and
    /// either no usable decomposition exists or the failure streak crossed
    /// the threshold; bottom-up otherwise.
    pub fn choose_mode(&self, ctx: &PlannerContext) -> ChosenMode {
        if ctx.objective.is_none() {
            return ChosenMode::BottomUp;
        }
        let live = self
            .decomposition
            .as_ref()
            .is_some_and(|d| !d.is_complete());
        if !live || ctx.failure_streak >= self.params.mode_switch_streak {
            ChosenMode::TopDown
        } else {
            ChosenMode::BottomUp
        }
    }

    fn memories_section(ctx: &PlannerContext) -> String {
        let mut lines = Vec::new();
        for mem in &ctx.preferred_memories {
            lines.push(format!("- (preferred) {}", mem.summary));
        }
        for mem in &ctx.related_memories {
            lines.push(format!("- (related) {}", mem.summary));
        }
        if lines.is_empty() {
            "none yet".to_string()
        } else {
            lines.join("\n")
        }
    }

    /// Ask the model to break the objective into ordered sub-tasks and make
    /// the result the live decomposition. Replacing a live decomposition
    /// marks its active sub-task failed.
    pub fn decompose(
        &mut self,
        ctx: &PlannerContext,
        gateway: &Gateway,
        budget: &mut ReparseBudget,
    ) -> Result<&TaskDecomposition, PlannerError> {
        let objective = ctx.objective.as_deref().ok_or(PlannerError::NoObjective)?;
        let vars: BTreeMap<&str, String> = BTreeMap::from([
            ("personality", ctx.personality_prompt.clone()),
            ("state", ctx.current_state.clone()),
            ("objective", objective.to_string()),
            ("memories", Self::memories_section(ctx)),
            ("capabilities", ctx.capabilities.describe()),
        ]);
        let mut prompt = self
            .templates
            .render(TemplateRole::TopDownDecomposition, &vars)?;
        let mut attempts = 0;
        let sub_tasks = loop {
            attempts += 1;
            let reply = gateway.complete_instruction(&prompt)?.text;
            match parse_subtask_completion(&reply) {
                Ok(tasks) => break tasks,
                Err(reason) => {
                    if !budget.try_take() {
                        return Err(PlannerError::Unparsable {
                            attempts,
                            raw: reply,
                        });
                    }
                    prompt = format!(
                        "{prompt}\n\nYour previous reply could not be used ({reason}). \
                         Reply with exactly one JSON array of sub-task strings."
                    );
                }
            }
        };
        if sub_tasks.is_empty() {
            return Err(PlannerError::DegenerateDecomposition);
        }
        if let Some(old) = self.decomposition.as_mut() {
            if let Some(active) = old.active_index() {
                old.sub_tasks[active].status = SubTaskStatus::Failed;
            }
        }
        let objective_id = format!("obj-{}", crate::memory::text_hash(objective));
        self.decomposition = Some(TaskDecomposition::new(objective_id, objective, sub_tasks)?);
        Ok(self.decomposition.as_ref().expect("just set"))
    }

    /// Compose the planning prompt and parse one plan out of the reply.
    /// The rendered personality prompt is embedded verbatim.
    pub fn plan_next(
        &self,
        ctx: &PlannerContext,
        gateway: &Gateway,
        budget: &mut ReparseBudget,
    ) -> Result<ActionPlan, PlannerError> {
        if ctx.capabilities.is_empty() {
            return Err(PlannerError::NoCapabilities);
        }
        let active = self
            .decomposition
            .as_ref()
            .filter(|d| !d.is_complete())
            .and_then(|d| d.active_index().map(|i| (d, i)));
        let subtask_text = active
            .map(|(d, i)| d.sub_tasks[i].description.clone())
            .unwrap_or_else(|| "none".to_string());
        let vars: BTreeMap<&str, String> = BTreeMap::from([
            ("personality", ctx.personality_prompt.clone()),
            ("state", ctx.current_state.clone()),
            (
                "objective",
                ctx.objective
                    .clone()
                    .unwrap_or_else(|| "free exploration".to_string()),
            ),
            ("subtask", subtask_text),
            ("memories", Self::memories_section(ctx)),
            ("capabilities", ctx.capabilities.describe()),
        ]);
        let mut prompt = self.templates.render(TemplateRole::BottomUpPlan, &vars)?;
        let mut attempts = 0;
        let wire = loop {
            attempts += 1;
            let reply = gateway.complete_instruction(&prompt)?.text;
            match parse_plan_completion(&reply) {
                Ok(wire) => break wire,
                Err(reason) => {
                    if !budget.try_take() {
                        return Err(PlannerError::Unparsable {
                            attempts,
                            raw: reply,
                        });
                    }
                    prompt = format!(
                        "{prompt}\n\nYour previous reply could not be used ({reason}). \
                         Reply with exactly one JSON object with keys \"action\", \
                         \"parameters\", \"rationale\"."
                    );
                }
            }
        };
        Ok(self.attach_mode(wire))
    }

    fn attach_mode(&self, wire: PlanWire) -> ActionPlan {
        let live = self
            .decomposition
            .as_ref()
            .filter(|d| !d.is_complete())
            .and_then(|d| d.active_index().map(|i| (d.objective_id.clone(), i)));
        match live {
            Some((objective_id, sub_task_index)) => ActionPlan {
                mode: PlanMode::TopDownStep,
                action: wire.action,
                parameters: wire.parameters,
                rationale: wire.rationale,
                objective_ref: Some(ObjectiveRef {
                    objective_id,
                    sub_task_index,
                }),
            },
            None => ActionPlan {
                mode: PlanMode::BottomUp,
                action: wire.action,
                parameters: wire.parameters,
                rationale: wire.rationale,
                objective_ref: None,
            },
        }
    }

    /// Check a plan against the capability list and per-action schemas.
    /// Failures are verdicts, never errors.
    pub fn validate_plan(plan: &ActionPlan, ctx: &PlannerContext) -> ValidationReport {
        let mut reasons = Vec::new();
        match ctx.capabilities.get(&plan.action) {
            None => reasons.push(format!(
                "action {:?} is not available; choose one of: {}",
                plan.action,
                ctx.capabilities.names().join(", ")
            )),
            Some(schema) => {
                for param in &schema.required_params {
                    if !plan.parameters.contains_key(param) {
                        reasons.push(format!(
                            "action {:?} is missing required parameter {:?}",
                            plan.action, param
                        ));
                    }
                }
            }
        }
        if plan.mode == PlanMode::TopDownStep && plan.objective_ref.is_none() {
            reasons.push("a top-down step must reference its objective".into());
        }
        ValidationReport {
            verdict: if reasons.is_empty() {
                Verdict::Valid
            } else {
                Verdict::Revise
            },
            reasons,
        }
    }

    /// Re-prompt with the rejection reasons appended until validation
    /// passes, bounded by the configured revision rounds.
    pub fn revise_plan(
        &self,
        plan: &ActionPlan,
        report: &ValidationReport,
        ctx: &PlannerContext,
        gateway: &Gateway,
    ) -> Result<ActionPlan, PlannerError> {
        if report.verdict == Verdict::Valid {
            return Err(PlannerError::NotRevisable);
        }
        let mut history: Vec<String> = report.reasons.clone();
        let mut current = plan.clone();
        let mut reasons = report.reasons.clone();
        for _ in 0..self.params.revision_rounds {
            let vars: BTreeMap<&str, String> = BTreeMap::from([
                ("personality", ctx.personality_prompt.clone()),
                ("state", ctx.current_state.clone()),
                (
                    "plan",
                    serde_json::to_string(&current).unwrap_or_else(|_| current.description()),
                ),
                ("reasons", reasons.join("\n")),
                ("capabilities", ctx.capabilities.describe()),
            ]);
            let prompt = self.templates.render(TemplateRole::PlanRevision, &vars)?;
            let reply = gateway.complete_instruction(&prompt)?.text;
            match parse_plan_completion(&reply) {
                Ok(wire) => {
                    let candidate = self.attach_mode(wire);
                    let verdict = Self::validate_plan(&candidate, ctx);
                    if verdict.verdict == Verdict::Valid {
                        return Ok(candidate);
                    }
                    history.extend(verdict.reasons.clone());
                    reasons = verdict.reasons;
                    current = candidate;
                }
                Err(reason) => {
                    let note = format!("reply was not a parsable plan: {reason}");
                    history.push(note.clone());
                    reasons = vec![note];
                }
            }
        }
        Err(PlannerError::RevisionExhausted {
            rounds: self.params.revision_rounds,
            history,
        })
    }

    /// Feed one execution outcome into the live decomposition.
    pub fn advance_progress(&mut self, outcome: Outcome) {
        if let Some(decomp) = self.decomposition.take() {
            self.decomposition = Some(update_progress(decomp, outcome));
        }
    }
}
