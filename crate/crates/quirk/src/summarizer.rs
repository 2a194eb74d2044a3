//! Turn each executed plan plus its feedback into a structured execution
//! summary, and derive the personality-preference text stored with the
//! memory record.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::executor::ExecutionFeedback;
use crate::gateway::{Gateway, GatewayError};
use crate::memory::Outcome;
use crate::personality::PersonalityProfile;
use crate::planner::{extract_json_value, ActionPlan, PlannerError, TemplateRole, TemplateStore};

/// Raw logs and errors are truncated to this many bytes before prompt
/// composition, keeping long game logs inside context limits.
pub const DEFAULT_LOG_BYTE_BUDGET: usize = 8 * 1024;

const SUMMARY_REPROMPTS: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum SummarizerError {
    #[error(transparent)]
    Template(#[from] PlannerError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("summary unparsable after {attempts} attempts; last reply: {raw:?}")]
    Unparsable { attempts: u32, raw: String },
}

/// The structured evaluation of one executed plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionSummary {
    pub outcome: Outcome,
    pub description: String,
    pub context: String,
    pub plan_summary: String,
}

#[derive(Deserialize)]
struct SummaryWire {
    outcome: String,
    description: String,
    #[serde(default)]
    context: String,
}

fn parse_outcome(text: &str) -> Option<Outcome> {
    match text.trim().to_ascii_lowercase().as_str() {
        "success" => Some(Outcome::Success),
        "partial" => Some(Outcome::Partial),
        "failure" => Some(Outcome::Failure),
        _ => None,
    }
}

fn truncate_bytes(text: &str, budget: usize) -> String {
    if text.len() <= budget {
        return text.to_string();
    }
    let mut end = budget;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{} ...[truncated]", &text[..end])
}

pub struct Summarizer {
    templates: TemplateStore,
    log_byte_budget: usize,
}

impl Summarizer {
    pub fn new(templates: TemplateStore) -> Self {
        Summarizer {
            templates,
            log_byte_budget: DEFAULT_LOG_BYTE_BUDGET,
        }
    }

    pub fn with_log_budget(mut self, bytes: usize) -> Self {
        self.log_byte_budget = bytes;
        self
    }

    /// Ask the instruction model for a structured summary of what happened.
    /// A timed-out execution is always a failure, whatever the model says.
    pub fn summarize_execution(
        &self,
        plan: &ActionPlan,
        feedback: &ExecutionFeedback,
        state_before: &str,
        state_after: &str,
        gateway: &Gateway,
    ) -> Result<ExecutionSummary, SummarizerError> {
        let vars: BTreeMap<&str, String> = BTreeMap::from([
            (
                "plan",
                serde_json::to_string(plan).unwrap_or_else(|_| plan.description()),
            ),
            (
                "logs",
                truncate_bytes(&feedback.logs.join("\n"), self.log_byte_budget),
            ),
            (
                "errors",
                truncate_bytes(&feedback.errors.join("\n"), self.log_byte_budget),
            ),
            ("timed_out", feedback.timed_out.to_string()),
            ("state_before", state_before.to_string()),
            ("state_after", state_after.to_string()),
        ]);
        let mut prompt = self.templates.render(TemplateRole::ActionSummary, &vars)?;
        let mut attempts = 0;
        let wire = loop {
            attempts += 1;
            let reply = gateway.complete_instruction(&prompt)?.text;
            let parsed = extract_json_value(&reply, '{', '}')
                .ok_or_else(|| "no JSON object found".to_string())
                .and_then(|json| {
                    serde_json::from_str::<SummaryWire>(json).map_err(|e| e.to_string())
                })
                .and_then(|wire| {
                    if wire.description.trim().is_empty() {
                        Err("empty description".to_string())
                    } else if parse_outcome(&wire.outcome).is_none() {
                        Err(format!("unknown outcome {:?}", wire.outcome))
                    } else {
                        Ok(wire)
                    }
                });
            match parsed {
                Ok(wire) => break wire,
                Err(reason) => {
                    if attempts > SUMMARY_REPROMPTS {
                        return Err(SummarizerError::Unparsable {
                            attempts,
                            raw: reply,
                        });
                    }
                    prompt = format!(
                        "{prompt}\n\nYour previous reply could not be used ({reason}). \
                         Reply with exactly one JSON object with keys \"outcome\", \
                         \"description\", \"context\"."
                    );
                }
            }
        };

        let mut outcome = parse_outcome(&wire.outcome).expect("validated above");
        let mut description = wire.description;
        if feedback.timed_out {
            outcome = Outcome::Failure;
            if !description.to_lowercase().contains("time") {
                description = format!("{description} (execution timed out)");
            }
        }
        Ok(ExecutionSummary {
            outcome,
            description,
            context: wire.context,
            plan_summary: plan.description(),
        })
    }

    /// Summary synthesized from raw feedback when the model never produced
    /// a usable one; keeps the loop alive with an honest failure record.
    pub fn fallback_summary(plan: &ActionPlan, feedback: &ExecutionFeedback) -> ExecutionSummary {
        let first_error = feedback
            .errors
            .first()
            .cloned()
            .unwrap_or_else(|| "no error detail".to_string());
        ExecutionSummary {
            outcome: Outcome::Failure,
            description: format!("summary unavailable; first error: {first_error}"),
            context: String::new(),
            plan_summary: plan.description(),
        }
    }

    /// Describe how the action and outcome reflect the active trait. An
    /// empty completion is retried once, then replaced by the templated
    /// fallback. The result always names the trait.
    pub fn preference_summary(
        &self,
        summary: &ExecutionSummary,
        profile: &PersonalityProfile,
        gateway: &Gateway,
    ) -> Result<String, SummarizerError> {
        let vars: BTreeMap<&str, String> = BTreeMap::from([
            ("trait", profile.name.clone()),
            ("trait_prompt", profile.prompt_text.clone()),
            ("plan", summary.plan_summary.clone()),
            ("outcome", summary.outcome.to_string()),
            ("description", summary.description.clone()),
        ]);
        let prompt = self
            .templates
            .render(TemplateRole::PreferenceSummary, &vars)?;
        for _ in 0..2 {
            let text = gateway
                .complete_instruction(&prompt)?
                .text
                .trim()
                .to_string();
            if !text.is_empty() {
                return Ok(ensure_trait_mention(text, &profile.name));
            }
        }
        Ok(fallback_preference(summary.outcome, &profile.name))
    }
}

/// The documented fallback preference text.
pub fn fallback_preference(outcome: Outcome, trait_name: &str) -> String {
    format!("outcome {outcome} under trait {trait_name}")
}

fn ensure_trait_mention(text: String, trait_name: &str) -> String {
    if text.to_lowercase().contains(&trait_name.to_lowercase()) {
        text
    } else {
        format!("{text} [trait: {trait_name}]")
    }
}
