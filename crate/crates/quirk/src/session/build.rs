//! Assemble a [`SessionHarness`] from a validated config plus data
//! directories. This is the production wiring used by the CLI; tests often
//! build the harness by hand instead.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use crate::config::RunConfig;
use crate::executor::CodeExecutor;
use crate::gateway::{Backend, Gateway, HttpBackend, ScriptedBackend};
use crate::memory::HashEmbedder;
use crate::personality::{load_profile, map_entities, EntityMapping, EntityRegistry};
use crate::planner::{CapabilitySet, TemplateStore};

use super::{gateway_settings_from, SessionError, SessionHarness};

const REFENV_CAPABILITIES: &str = include_str!("../../../../assets/capabilities/refenv.tsv");
const REFENV_MAPPING: &str = include_str!("../../../../assets/mappings/refenv.tsv");
const REFENV_GAME_SPEC: &str = include_str!("../../../../assets/game_specs/refenv.txt");

/// Basic skills shipped for the reference environment, in seed-file format.
pub const REFENV_BASIC_SKILLS: [(&str, &str); 3] = [
    (
        "scout",
        include_str!("../../../../assets/skills/refenv/scout.skill"),
    ),
    (
        "advance_east",
        include_str!("../../../../assets/skills/refenv/advance_east.skill"),
    ),
    (
        "advance_and_strike",
        include_str!("../../../../assets/skills/refenv/advance_and_strike.skill"),
    ),
];

/// Optional file and directory inputs for [`build_harness`]. Every `None`
/// falls back to built-in data when the game subject is `refenv`, or to an
/// empty default otherwise.
#[derive(Default)]
pub struct HarnessOptions {
    pub templates_dir: Option<PathBuf>,
    pub custom_profiles_dir: Option<PathBuf>,
    pub capabilities_file: Option<PathBuf>,
    pub entity_registry_file: Option<PathBuf>,
    pub entity_mapping_file: Option<PathBuf>,
    pub game_spec_file: Option<PathBuf>,
    pub skills_dir: Option<PathBuf>,
    pub memory_root: PathBuf,
    pub report_path: Option<PathBuf>,
    pub code_executor: Option<Arc<dyn CodeExecutor>>,
    pub bind_override: Option<(String, u16)>,
    /// Test hook: use these backends instead of HTTP ones.
    pub backend_override: Option<BackendPair>,
}

pub struct BackendPair {
    pub instruction: Arc<dyn Backend>,
    pub code: Option<Arc<dyn Backend>>,
}

/// Build the model gateway for a config: a scripted backend when the
/// `LLM_SCRIPT` game param names a rules file (fully offline runs), HTTP
/// backends for the configured endpoints otherwise.
pub fn build_gateway(cfg: &RunConfig) -> Result<Gateway, SessionError> {
    let settings = gateway_settings_from(cfg)?;
    if let Some(script) = cfg.game_param("LLM_SCRIPT") {
        let backend = Arc::new(ScriptedBackend::from_json_file(std::path::Path::new(
            script,
        ))?);
        return Ok(Gateway::new(backend.clone())
            .with_code_backend(backend)
            .with_settings(settings));
    }
    let timeout = Duration::from_secs(cfg.game_param_u64("LLM_TIMEOUT_SECS", 60)?);
    let instruction: Arc<dyn Backend> =
        Arc::new(HttpBackend::new(cfg.instruction_model.clone(), timeout)?);
    let mut gateway = Gateway::new(instruction).with_settings(settings);
    if let Some(code_endpoint) = &cfg.code_model {
        let code: Arc<dyn Backend> = Arc::new(HttpBackend::new(code_endpoint.clone(), timeout)?);
        gateway = gateway.with_code_backend(code);
    }
    Ok(gateway)
}

/// Resolve profiles, entity mappings, capabilities, the gateway, and the
/// game spec into a ready-to-run harness.
pub fn build_harness(
    cfg: &RunConfig,
    options: HarnessOptions,
) -> Result<SessionHarness, SessionError> {
    let is_refenv = cfg.game_subject == "refenv";

    let profile = load_profile(&cfg.personality, options.custom_profiles_dir.as_deref())?;

    let registry = match &options.entity_registry_file {
        Some(path) => EntityRegistry::load(path)?,
        None => EntityRegistry::builtin(),
    };
    let mapping = match &options.entity_mapping_file {
        Some(path) => EntityMapping::load(path, &cfg.game_subject, &registry)?,
        None if is_refenv => {
            EntityMapping::parse(REFENV_MAPPING, "<builtin>", &cfg.game_subject, &registry)?
        }
        None => EntityMapping::empty(&cfg.game_subject),
    };
    let personality_prompt = map_entities(&profile, &mapping)?;

    let capabilities = match &options.capabilities_file {
        Some(path) => CapabilitySet::from_tsv_file(path)?,
        None if is_refenv => CapabilitySet::from_tsv(REFENV_CAPABILITIES)?,
        None => {
            return Err(SessionError::MissingInput {
                what: "capabilities file",
                hint: "pass --capabilities <file> (action name, tab, required params)",
            })
        }
    };

    let game_spec = match &options.game_spec_file {
        Some(path) => std::fs::read_to_string(path).map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })?,
        None if is_refenv => REFENV_GAME_SPEC.to_string(),
        None => String::new(),
    };

    let gateway = match options.backend_override {
        Some(pair) => {
            let mut gateway =
                Gateway::new(pair.instruction).with_settings(gateway_settings_from(cfg)?);
            if let Some(code) = pair.code {
                gateway = gateway.with_code_backend(code);
            }
            gateway
        }
        None => build_gateway(cfg)?,
    };

    let dim = cfg.game_param_u64("EMBED_DIM", crate::memory::DEFAULT_EMBED_DIM as u64)? as usize;
    let seed = cfg.game_param_u64("EMBED_SEED", 0)?;
    let embedder = Arc::new(HashEmbedder::new(seed, dim));

    let templates = TemplateStore::new(options.templates_dir, cfg.game_subject.clone());

    let mut harness = SessionHarness::new(
        gateway,
        embedder,
        templates,
        profile,
        personality_prompt,
        capabilities,
        options.memory_root,
    );
    harness.game_spec = game_spec;
    harness.basic_skills_dir = options.skills_dir;
    if harness.basic_skills_dir.is_none() && is_refenv {
        harness.basic_skill_texts = REFENV_BASIC_SKILLS
            .iter()
            .map(|(n, t)| (n.to_string(), t.to_string()))
            .collect();
    }
    harness.code_executor = options.code_executor;
    harness.bind_override = options.bind_override;
    harness.report_path = options.report_path;
    Ok(harness)
}
