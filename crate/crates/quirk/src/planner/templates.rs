//! Prompt templates, loaded per game with fallbacks.
//!
//! Lookup order for role `r` under game `g`: `<dir>/<g>/<r>.txt`, then
//! `<dir>/default/<r>.txt`, then the copy compiled in from
//! `assets/templates/default/`. Placeholders are `{{name}}`; rendering with
//! a placeholder left unresolved is an error so template typos surface
//! immediately instead of reaching a model.

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::PlannerError;

/// The seven template roles used across the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateRole {
    BottomUpPlan,
    TopDownDecomposition,
    PlanRevision,
    ActionSummary,
    PreferenceSummary,
    CodeGeneration,
    CodeRefinement,
}

impl TemplateRole {
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateRole::BottomUpPlan => "bottom_up_plan",
            TemplateRole::TopDownDecomposition => "top_down_decomposition",
            TemplateRole::PlanRevision => "plan_revision",
            TemplateRole::ActionSummary => "action_summary",
            TemplateRole::PreferenceSummary => "preference_summary",
            TemplateRole::CodeGeneration => "code_generation",
            TemplateRole::CodeRefinement => "code_refinement",
        }
    }

    fn embedded(self) -> &'static str {
        match self {
            TemplateRole::BottomUpPlan => {
                include_str!("../../../../assets/templates/default/bottom_up_plan.txt")
            }
            TemplateRole::TopDownDecomposition => {
                include_str!("../../../../assets/templates/default/top_down_decomposition.txt")
            }
            TemplateRole::PlanRevision => {
                include_str!("../../../../assets/templates/default/plan_revision.txt")
            }
            TemplateRole::ActionSummary => {
                include_str!("../../../../assets/templates/default/action_summary.txt")
            }
            TemplateRole::PreferenceSummary => {
                include_str!("../../../../assets/templates/default/preference_summary.txt")
            }
            TemplateRole::CodeGeneration => {
                include_str!("../../../../assets/templates/default/code_generation.txt")
            }
            TemplateRole::CodeRefinement => {
                include_str!("../../../../assets/templates/default/code_refinement.txt")
            }
        }
    }
}

/// Loads templates for one game subject.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    dir: Option<PathBuf>,
    game_subject: String,
}

impl TemplateStore {
    pub fn new(dir: Option<PathBuf>, game_subject: impl Into<String>) -> Self {
        TemplateStore {
            dir,
            game_subject: game_subject.into(),
        }
    }

    /// Compiled-in defaults only; used by tests and embedded runs.
    pub fn embedded(game_subject: impl Into<String>) -> Self {
        TemplateStore::new(None, game_subject)
    }

    pub fn load(&self, role: TemplateRole) -> Result<String, PlannerError> {
        if let Some(dir) = &self.dir {
            let candidates = [
                dir.join(&self.game_subject)
                    .join(format!("{}.txt", role.file_name())),
                dir.join("default")
                    .join(format!("{}.txt", role.file_name())),
            ];
            for path in candidates {
                if path.is_file() {
                    return std::fs::read_to_string(&path).map_err(|e| PlannerError::Template {
                        role: role.file_name(),
                        reason: format!("cannot read {}: {e}", path.display()),
                    });
                }
            }
        }
        Ok(role.embedded().to_string())
    }

    /// Load and render in one step.
    pub fn render(
        &self,
        role: TemplateRole,
        vars: &BTreeMap<&str, String>,
    ) -> Result<String, PlannerError> {
        render_template(role.file_name(), &self.load(role)?, vars)
    }
}

/// Substitute `{{name}}` placeholders. Unknown placeholders are an error.
pub fn render_template(
    role: &'static str,
    template: &str,
    vars: &BTreeMap<&str, String>,
) -> Result<String, PlannerError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(PlannerError::Template {
                role,
                reason: "unterminated {{placeholder}}".into(),
            });
        };
        let name = after[..end].trim();
        let value = vars.get(name).ok_or(PlannerError::Template {
            role,
            reason: format!("no value for placeholder {{{{{name}}}}}"),
        })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
