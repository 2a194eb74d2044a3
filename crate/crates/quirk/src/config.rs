//! Run settings loaded from a key=value environment file.
//!
//! Precedence, highest first: CLI overrides > process environment > file
//! values > built-in defaults. Unknown keys are kept in `game_params` so a
//! new game can add its own keys (task names, ports, monster types) without
//! any schema change here.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

/// Keys that must be present after merging file, environment, and overrides.
pub const REQUIRED_KEYS: [&str; 3] = ["GAME_SUBJECT", "PERSONALITY", "AGENT_NAME"];

pub const DEFAULT_EXP_DURATION_MINUTES: f64 = 125.0;
pub const DEFAULT_RETRIEVAL_K: usize = 5;
pub const DEFAULT_BRIDGE_HOST: &str = "localhost";
pub const DEFAULT_BRIDGE_PORT: u16 = 1111;
pub const DEFAULT_INSTRUCTION_MODEL: &str = "openai/gpt-4o";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing required key {key}")]
    MissingKey { key: &'static str },
    #[error("line {line}: cannot parse {key}={value}: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected KEY=VALUE, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown personality {name:?}; built-in traits are: {available}")]
    UnknownPersonality { name: String, available: String },
    #[error("IS_PLAN_TO_CODE=true requires CODE_MODEL_NAME to be set")]
    CodeModelMissing,
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// An API key that never appears in Debug or Display output.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    /// The raw value, for request headers and config round-trips only.
    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[redacted]")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[redacted]")
    }
}

/// Where completions for one model role are served.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEndpoint {
    pub model_name: String,
    pub base_url: Option<String>,
    pub api_key: Option<Secret>,
}

impl ModelEndpoint {
    pub fn new(model_name: impl Into<String>) -> Self {
        ModelEndpoint {
            model_name: model_name.into(),
            base_url: None,
            api_key: None,
        }
    }
}

/// All settings for one testing session.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub game_subject: String,
    pub personality: String,
    pub agent_name: String,
    pub exp_duration: Duration,
    pub is_continued: bool,
    pub instruction_model: ModelEndpoint,
    pub code_model: Option<ModelEndpoint>,
    pub is_plan_to_code: bool,
    pub bridge_host: String,
    pub bridge_port: u16,
    pub game_params: BTreeMap<String, String>,
    pub retrieval_k: usize,
}

impl RunConfig {
    /// Look up a game-specific parameter by key.
    pub fn game_param(&self, key: &str) -> Option<&str> {
        self.game_params.get(key).map(String::as_str)
    }

    /// Game param parsed as an integer, or `default` when absent.
    /// A present-but-unparsable value is an error.
    pub fn game_param_u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.game_params.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| ConfigError::BadValue {
                line: 0,
                key: key.to_string(),
                value: raw.clone(),
                reason: "expected an integer".into(),
            }),
        }
    }

    /// The testing objective, if one is configured. Looks up
    /// `<GAME_SUBJECT>_TASK` (upper-cased) first, then plain `TASK`.
    pub fn objective(&self) -> Option<&str> {
        let scoped = format!("{}_TASK", self.game_subject.to_uppercase());
        self.game_param(&scoped).or_else(|| self.game_param("TASK"))
    }

    /// Serialize back to key=value text. Reloading the output yields an
    /// equal config (round-trip property).
    pub fn to_env_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: &str| {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        };
        push("GAME_SUBJECT", &self.game_subject);
        push("PERSONALITY", &self.personality);
        push("AGENT_NAME", &self.agent_name);
        push("EXP_DURATION", &format_minutes(self.exp_duration));
        push(
            "IS_CONTINUED",
            if self.is_continued { "true" } else { "false" },
        );
        push("INSTRUCTION_MODEL_NAME", &self.instruction_model.model_name);
        if let Some(url) = &self.instruction_model.base_url {
            push("INSTRUCTION_MODEL_URL", url);
        }
        if let Some(key) = &self.instruction_model.api_key {
            push("OPENAI_API_KEY", key.expose());
        }
        if let Some(code) = &self.code_model {
            push("CODE_MODEL_NAME", &code.model_name);
            if let Some(url) = &code.base_url {
                push("CODE_MODEL_URL", url);
            }
        }
        push(
            "IS_PLAN_TO_CODE",
            if self.is_plan_to_code {
                "true"
            } else {
                "false"
            },
        );
        push("BRIDGE_HOST", &self.bridge_host);
        push("BRIDGE_PORT", &self.bridge_port.to_string());
        push("RETRIEVAL_K", &self.retrieval_k.to_string());
        for (k, v) in &self.game_params {
            push(k, v);
        }
        out
    }
}

fn format_minutes(d: Duration) -> String {
    let minutes = d.as_secs_f64() / 60.0;
    if (minutes - minutes.round()).abs() < 1e-9 {
        format!("{}", minutes.round() as u64)
    } else {
        format!("{minutes}")
    }
}

/// Keys consumed by the typed fields of [`RunConfig`]. Everything else
/// lands in `game_params`.
const KNOWN_KEYS: [&str; 12] = [
    "GAME_SUBJECT",
    "PERSONALITY",
    "AGENT_NAME",
    "EXP_DURATION",
    "IS_CONTINUED",
    "INSTRUCTION_MODEL_NAME",
    "INSTRUCTION_MODEL_URL",
    "OPENAI_API_KEY",
    "CODE_MODEL_NAME",
    "CODE_MODEL_URL",
    "IS_PLAN_TO_CODE",
    "BRIDGE_HOST",
];
const KNOWN_KEYS_TAIL: [&str; 2] = ["BRIDGE_PORT", "RETRIEVAL_K"];

fn is_known_key(key: &str) -> bool {
    KNOWN_KEYS.contains(&key) || KNOWN_KEYS_TAIL.contains(&key)
}

/// Parse key=value lines. `#` starts a comment, blank lines are skipped.
/// Returns (key, value, line number) triples in file order.
fn parse_env_lines(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                line: line_no,
                text: raw.to_string(),
            });
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::BadLine {
                line: line_no,
                text: raw.to_string(),
            });
        }
        pairs.push((key, value.trim().to_string(), line_no));
    }
    Ok(pairs)
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected true or false".into(),
        }),
    }
}

/// Load a config file, apply process-environment and explicit overrides,
/// then fill documented defaults.
///
/// Process environment variables override file values, but only for keys
/// already named by the file or by the typed schema; the rest of the
/// process environment is ignored. `overrides` (CLI pairs) win over both.
pub fn load_config(
    path: &Path,
    overrides: &BTreeMap<String, String>,
) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_config_from_str(&text, overrides)
}

/// As [`load_config`], from already-read text.
pub fn load_config_from_str(
    text: &str,
    overrides: &BTreeMap<String, String>,
) -> Result<RunConfig, ConfigError> {
    // Merged view: key -> (value, source line; 0 for env/override).
    let mut merged: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (key, value, line) in parse_env_lines(text)? {
        merged.insert(key, (value, line));
    }
    for key in KNOWN_KEYS.iter().chain(KNOWN_KEYS_TAIL.iter()) {
        if let Ok(value) = std::env::var(key) {
            merged.insert(key.to_string(), (value, 0));
        }
    }
    let file_keys: Vec<String> = merged.keys().cloned().collect();
    for key in file_keys {
        if !is_known_key(&key) {
            if let Ok(value) = std::env::var(&key) {
                merged.insert(key, (value, 0));
            }
        }
    }
    for (key, value) in overrides {
        merged.insert(key.clone(), (value.clone(), 0));
    }

    let mut take = |key: &str| merged.remove(key);

    let mut required = |key: &'static str| -> Result<String, ConfigError> {
        match take(key) {
            Some((v, _)) if !v.is_empty() => Ok(v),
            _ => Err(ConfigError::MissingKey { key }),
        }
    };

    let game_subject = required("GAME_SUBJECT")?;
    let personality = required("PERSONALITY")?;
    let agent_name = required("AGENT_NAME")?;

    let exp_duration = match merged.remove("EXP_DURATION") {
        None => Duration::from_secs_f64(DEFAULT_EXP_DURATION_MINUTES * 60.0),
        Some((v, line)) => {
            let minutes: f64 = v.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: "EXP_DURATION".into(),
                value: v.clone(),
                reason: "expected minutes as a number".into(),
            })?;
            if !minutes.is_finite() || minutes <= 0.0 {
                return Err(ConfigError::BadValue {
                    line,
                    key: "EXP_DURATION".into(),
                    value: v,
                    reason: "must be > 0".into(),
                });
            }
            Duration::from_secs_f64(minutes * 60.0)
        }
    };

    let is_continued = match merged.remove("IS_CONTINUED") {
        None => true,
        Some((v, line)) => parse_bool("IS_CONTINUED", &v, line)?,
    };

    let none_if_empty =
        |opt: Option<(String, usize)>| opt.map(|(v, _)| v).filter(|v| !v.is_empty());

    let api_key = none_if_empty(merged.remove("OPENAI_API_KEY")).map(Secret::new);
    let instruction_model = ModelEndpoint {
        model_name: none_if_empty(merged.remove("INSTRUCTION_MODEL_NAME"))
            .unwrap_or_else(|| DEFAULT_INSTRUCTION_MODEL.to_string()),
        base_url: none_if_empty(merged.remove("INSTRUCTION_MODEL_URL")),
        api_key: api_key.clone(),
    };

    let code_model =
        none_if_empty(merged.remove("CODE_MODEL_NAME")).map(|model_name| ModelEndpoint {
            model_name,
            base_url: none_if_empty(merged.remove("CODE_MODEL_URL")),
            api_key,
        });
    merged.remove("CODE_MODEL_URL");

    let is_plan_to_code = match merged.remove("IS_PLAN_TO_CODE") {
        None => false,
        Some((v, line)) => parse_bool("IS_PLAN_TO_CODE", &v, line)?,
    };

    let bridge_host = none_if_empty(merged.remove("BRIDGE_HOST"))
        .unwrap_or_else(|| DEFAULT_BRIDGE_HOST.to_string());

    let bridge_port = match merged.remove("BRIDGE_PORT") {
        None => DEFAULT_BRIDGE_PORT,
        Some((v, line)) => {
            let port: u16 = v.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: "BRIDGE_PORT".into(),
                value: v.clone(),
                reason: "expected a port in [1, 65535]".into(),
            })?;
            if port == 0 {
                return Err(ConfigError::BadValue {
                    line,
                    key: "BRIDGE_PORT".into(),
                    value: v,
                    reason: "expected a port in [1, 65535]".into(),
                });
            }
            port
        }
    };

    let retrieval_k = match merged.remove("RETRIEVAL_K") {
        None => DEFAULT_RETRIEVAL_K,
        Some((v, line)) => {
            let k: usize = v.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: "RETRIEVAL_K".into(),
                value: v.clone(),
                reason: "expected a positive integer".into(),
            })?;
            if k == 0 {
                return Err(ConfigError::BadValue {
                    line,
                    key: "RETRIEVAL_K".into(),
                    value: v,
                    reason: "must be >= 1".into(),
                });
            }
            k
        }
    };

    let game_params = merged.into_iter().map(|(k, (v, _))| (k, v)).collect();

    Ok(RunConfig {
        game_subject,
        personality,
        agent_name,
        exp_duration,
        is_continued,
        instruction_model,
        code_model,
        is_plan_to_code,
        bridge_host,
        bridge_port,
        game_params,
        retrieval_k,
    })
}

/// Cross-field checks that need context beyond the file itself.
///
/// `personality_registry` lists the resolvable trait names (built-ins plus
/// any custom prompt files found at startup).
pub fn validate_config(
    cfg: RunConfig,
    personality_registry: &[String],
) -> Result<RunConfig, ConfigError> {
    if cfg.agent_name.is_empty() {
        return Err(ConfigError::Invalid {
            field: "AGENT_NAME",
            reason: "must be non-empty".into(),
        });
    }
    if cfg.exp_duration.is_zero() {
        return Err(ConfigError::Invalid {
            field: "EXP_DURATION",
            reason: "must be > 0".into(),
        });
    }
    if !personality_registry.iter().any(|n| n == &cfg.personality) {
        return Err(ConfigError::UnknownPersonality {
            name: cfg.personality.clone(),
            available: crate::personality::BUILTIN_TRAITS.join(", "),
        });
    }
    if cfg.is_plan_to_code && cfg.code_model.is_none() {
        return Err(ConfigError::CodeModelMissing);
    }
    Ok(cfg)
}
