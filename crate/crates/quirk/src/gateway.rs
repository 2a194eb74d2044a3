//! Single abstraction over instruction-model and code-model completions.
//!
//! Every model call in the framework goes through a [`Backend`]. Two are
//! provided: [`HttpBackend`], speaking a chat-completions-style HTTP
//! contract (documented in the README), and [`ScriptedBackend`], a
//! deterministic canned-response backend that makes the whole agent loop
//! testable offline. No other module performs network I/O to model
//! endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::config::ModelEndpoint;

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const DEFAULT_INSTRUCTION_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_CODE_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        #[source]
        last: Box<GatewayError>,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no code model configured")]
    CodeModelNotConfigured,
}

impl GatewayError {
    /// Transport and timeout failures may succeed on retry; protocol and
    /// request errors never do.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Timeout(_))
    }
}

/// Which configured model a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionRole {
    Instruction,
    Code,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub role: CompletionRole,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub request_id: String,
}

impl CompletionRequest {
    pub fn new(role: CompletionRole, prompt: impl Into<String>) -> Result<Self, GatewayError> {
        let prompt = prompt.into();
        if prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let temperature = match role {
            CompletionRole::Instruction => DEFAULT_INSTRUCTION_TEMPERATURE,
            CompletionRole::Code => DEFAULT_CODE_TEMPERATURE,
        };
        Ok(CompletionRequest {
            role,
            prompt,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature,
            request_id: uuid::Uuid::new_v4().to_string(),
        })
    }
}

/// Prompt/completion token counts; zero when the backend does not report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub latency: Duration,
    pub token_usage: TokenUsage,
}

/// A completion source. Implementations must be safe for concurrent use.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError>;
}

/// Route one request to a backend.
pub fn complete(
    backend: &dyn Backend,
    req: &CompletionRequest,
) -> Result<CompletionResult, GatewayError> {
    backend.complete(req)
}

/// Retry transport/timeout failures with exponential backoff
/// (`backoff_base`, doubling per attempt). Protocol errors surface
/// immediately. Exhausted attempts return the last error annotated with
/// the attempt count.
pub fn complete_with_retry(
    backend: &dyn Backend,
    req: &CompletionRequest,
    max_attempts: u32,
    backoff_base: Duration,
) -> Result<CompletionResult, GatewayError> {
    assert!(max_attempts >= 1, "max_attempts must be >= 1");
    let mut backoff = backoff_base;
    let mut last_err = None;
    for attempt in 1..=max_attempts {
        match backend.complete(req) {
            Ok(result) => return Ok(result),
            Err(err) if err.is_retryable() => {
                last_err = Some(err);
                if attempt < max_attempts {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
            Err(err) => return Err(err),
        }
    }
    Err(GatewayError::Exhausted {
        attempts: max_attempts,
        last: Box::new(last_err.expect("at least one attempt ran")),
    })
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// One canned reply, or an injected failure for fault testing.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedReply {
    Text(String),
    TransportError(String),
    TimeoutError(String),
    ProtocolError(String),
}

struct RuleState {
    matcher: String,
    replies: Vec<ScriptedReply>,
    cursor: usize,
}

/// Deterministic backend: the first rule whose matcher is a substring of
/// the prompt wins; successive hits on the same rule consume its reply
/// sequence, repeating the last entry. Every request is appended to the
/// call log, failures included.
pub struct ScriptedBackend {
    rules: Mutex<Vec<RuleState>>,
    default_response: String,
    call_log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new(default_response: impl Into<String>) -> Self {
        ScriptedBackend {
            rules: Mutex::new(Vec::new()),
            default_response: default_response.into(),
            call_log: Mutex::new(Vec::new()),
        }
    }

    /// Append a rule with plain-text replies.
    pub fn rule<I, S>(self, matcher: impl Into<String>, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.rule_with(
            matcher,
            replies
                .into_iter()
                .map(|s| ScriptedReply::Text(s.into()))
                .collect(),
        )
    }

    /// Append a rule with explicit reply kinds (text or injected errors).
    pub fn rule_with(self, matcher: impl Into<String>, replies: Vec<ScriptedReply>) -> Self {
        assert!(!replies.is_empty(), "a rule needs at least one reply");
        self.rules.lock().unwrap().push(RuleState {
            matcher: matcher.into(),
            replies,
            cursor: 0,
        });
        self
    }

    /// Load rules from a JSON file: `{"default": "...", "rules":
    /// [{"match": "...", "responses": ["...", ...]}, ...]}`. File rules are
    /// text-only; error injection is available through [`Self::rule_with`].
    pub fn from_json_str(text: &str) -> Result<Self, GatewayError> {
        #[derive(serde::Deserialize)]
        struct FileRule {
            #[serde(rename = "match")]
            matcher: String,
            responses: Vec<String>,
        }
        #[derive(serde::Deserialize)]
        struct File {
            #[serde(default)]
            default: String,
            #[serde(default)]
            rules: Vec<FileRule>,
        }
        let file: File = serde_json::from_str(text)
            .map_err(|e| GatewayError::Protocol(format!("bad script file: {e}")))?;
        let mut backend = ScriptedBackend::new(file.default);
        for rule in file.rules {
            if rule.responses.is_empty() {
                return Err(GatewayError::Protocol(format!(
                    "rule {:?} has no responses",
                    rule.matcher
                )));
            }
            backend = backend.rule(rule.matcher, rule.responses);
        }
        Ok(backend)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Protocol(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Snapshot of every request seen so far, in order.
    pub fn call_log(&self) -> Vec<CompletionRequest> {
        self.call_log.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.call_log.lock().unwrap().len()
    }

    fn reply_for(&self, prompt: &str) -> ScriptedReply {
        let mut rules = self.rules.lock().unwrap();
        for rule in rules.iter_mut() {
            if prompt.contains(&rule.matcher) {
                let idx = rule.cursor.min(rule.replies.len() - 1);
                rule.cursor += 1;
                return rule.replies[idx].clone();
            }
        }
        ScriptedReply::Text(self.default_response.clone())
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        self.call_log.lock().unwrap().push(req.clone());
        match self.reply_for(&req.prompt) {
            ScriptedReply::Text(text) => Ok(CompletionResult {
                text,
                latency: Duration::ZERO,
                token_usage: TokenUsage::default(),
            }),
            ScriptedReply::TransportError(msg) => Err(GatewayError::Transport(msg)),
            ScriptedReply::TimeoutError(msg) => Err(GatewayError::Timeout(msg)),
            ScriptedReply::ProtocolError(msg) => Err(GatewayError::Protocol(msg)),
        }
    }
}

// ---------------------------------------------------------------------------
// Live HTTP backend
// ---------------------------------------------------------------------------

/// Chat-completions-style HTTP client. POSTs `{model, messages, max_tokens,
/// temperature}` to `<base_url>/chat/completions` and reads
/// `choices[0].message.content` back; see the README for the exact schema.
pub struct HttpBackend {
    endpoint: ModelEndpoint,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: ModelEndpoint, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(format!("client build failed: {e}")))?;
        Ok(HttpBackend { endpoint, client })
    }

    fn url(&self) -> String {
        let base = self
            .endpoint
            .base_url
            .as_deref()
            .unwrap_or("https://api.openai.com/v1");
        let base = base.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let body = serde_json::json!({
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        let started = Instant::now();
        let mut request = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.endpoint.api_key {
            request = request.bearer_auth(key.expose());
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout(e.to_string())
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            let err = format!(
                "status {status}: {}",
                text.chars().take(200).collect::<String>()
            );
            return if status.as_u16() == 429 || status.is_server_error() {
                Err(GatewayError::Transport(err))
            } else {
                Err(GatewayError::Protocol(err))
            };
        }
        let parsed: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Protocol(format!("malformed body: {e}")))?;
        let content = parsed["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Protocol("no choices[0].message.content".into()))?;
        let usage = TokenUsage {
            prompt_tokens: parsed["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: parsed["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(CompletionResult {
            text: content.to_string(),
            latency: started.elapsed(),
            token_usage: usage,
        })
    }
}

// ---------------------------------------------------------------------------
// Gateway: role routing, retry policy, call accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_tokens: u32,
    pub instruction_temperature: f64,
    pub code_temperature: f64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff_base: DEFAULT_BACKOFF_BASE,
            max_tokens: DEFAULT_MAX_TOKENS,
            instruction_temperature: DEFAULT_INSTRUCTION_TEMPERATURE,
            code_temperature: DEFAULT_CODE_TEMPERATURE,
        }
    }
}

/// The agent-facing entry point: routes by role, applies the retry policy,
/// and counts every backend call for per-iteration accounting.
pub struct Gateway {
    instruction: Arc<dyn Backend>,
    code: Option<Arc<dyn Backend>>,
    settings: GatewaySettings,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(instruction: Arc<dyn Backend>) -> Self {
        Gateway {
            instruction,
            code: None,
            settings: GatewaySettings::default(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_code_backend(mut self, code: Arc<dyn Backend>) -> Self {
        self.code = Some(code);
        self
    }

    pub fn with_settings(mut self, settings: GatewaySettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn has_code_backend(&self) -> bool {
        self.code.is_some()
    }

    /// Total backend calls issued, retries included.
    pub fn calls_made(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete_instruction(&self, prompt: &str) -> Result<CompletionResult, GatewayError> {
        self.complete_role(CompletionRole::Instruction, prompt)
    }

    pub fn complete_code(&self, prompt: &str) -> Result<CompletionResult, GatewayError> {
        self.complete_role(CompletionRole::Code, prompt)
    }

    fn complete_role(
        &self,
        role: CompletionRole,
        prompt: &str,
    ) -> Result<CompletionResult, GatewayError> {
        let backend: &dyn Backend = match role {
            CompletionRole::Instruction => self.instruction.as_ref(),
            CompletionRole::Code => self
                .code
                .as_deref()
                .ok_or(GatewayError::CodeModelNotConfigured)?,
        };
        let mut req = CompletionRequest::new(role, prompt)?;
        req.max_tokens = self.settings.max_tokens;
        req.temperature = match role {
            CompletionRole::Instruction => self.settings.instruction_temperature,
            CompletionRole::Code => self.settings.code_temperature,
        };
        let counting = CountingBackend {
            inner: backend,
            calls: &self.calls,
        };
        complete_with_retry(
            &counting,
            &req,
            self.settings.max_attempts,
            self.settings.backoff_base,
        )
    }
}

struct CountingBackend<'a> {
    inner: &'a dyn Backend,
    calls: &'a AtomicU64,
}

impl Backend for CountingBackend<'_> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}
