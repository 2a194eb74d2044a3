//! The environment side of the bridge protocol: connect to the agent,
//! send the start signal, then answer `GetStatus` and `ACTION:` frames.
//! Every frame in both directions is recorded in a transcript that the
//! conformance checker can audit after a run.

use std::net::TcpStream;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;

use crate::bridge::{
    encode_message, read_frame, write_frame, BridgeMessage, FeedbackPayload, OutboundFrame,
};

use super::{load_scenario, serialize_state, step, DslExecutor, DungeonState, EnvError};

/// One wire event, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub enum TranscriptEntry {
    /// Raw text payload the agent sent to the environment.
    ToEnv(String),
    /// Typed message the environment sent to the agent.
    ToAgent(BridgeMessage),
}

/// Test and fault-injection knobs for [`EnvHarness::serve_with`].
#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Wait this long after connecting before sending the start signal.
    pub start_delay: Option<Duration>,
    /// Wait this long before answering each `GetStatus`.
    pub status_delay: Option<Duration>,
    /// After the Nth executed action, send an extra command message before
    /// the feedback (exercises the agent's buffered-command path).
    pub inject_command_after_actions: Option<(u64, String)>,
    /// Misbehave: answer `ACTION:` frames with a status message.
    pub wrong_reply_to_action: bool,
    /// Disconnect (cleanly, from the environment side) after this many
    /// executed actions.
    pub close_after_actions: Option<u64>,
}

/// An in-process (or standalone) reference environment bound to one
/// dungeon state.
pub struct EnvHarness {
    state: Arc<Mutex<DungeonState>>,
    transcript: Arc<Mutex<Vec<TranscriptEntry>>>,
}

#[derive(Deserialize)]
struct PlanPayload {
    action: String,
    #[serde(default)]
    parameters: serde_json::Map<String, serde_json::Value>,
}

impl EnvHarness {
    pub fn new(state: DungeonState) -> Self {
        EnvHarness {
            state: Arc::new(Mutex::new(state)),
            transcript: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn from_scenario_file(path: &Path) -> Result<Self, EnvError> {
        Ok(Self::new(load_scenario(path)?))
    }

    /// The shared state handle; give it to a [`DslExecutor`] so code-mode
    /// executions act on the same world the protocol serves.
    pub fn state(&self) -> Arc<Mutex<DungeonState>> {
        Arc::clone(&self.state)
    }

    pub fn dsl_executor(&self) -> DslExecutor {
        DslExecutor::new(self.state())
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().clone()
    }

    /// Connect to the agent bridge and serve until the agent closes the
    /// connection.
    pub fn serve(&self, addr: &str) -> Result<(), EnvError> {
        self.serve_with(addr, ServeOptions::default())
    }

    pub fn serve_with(&self, addr: &str, options: ServeOptions) -> Result<(), EnvError> {
        let mut stream = connect_with_retry(addr)?;
        stream.set_nodelay(true).ok();

        if let Some(delay) = options.start_delay {
            std::thread::sleep(delay);
        }
        self.send(&mut stream, BridgeMessage::Command("b".into()))?;

        let mut actions_executed: u64 = 0;
        loop {
            let Some(payload) = read_frame(&mut stream).map_err(EnvError::Wire)? else {
                return Ok(());
            };
            let text = String::from_utf8(payload)
                .map_err(|e| EnvError::Protocol(format!("non-UTF-8 frame: {e}")))?;
            self.transcript
                .lock()
                .unwrap()
                .push(TranscriptEntry::ToEnv(text.clone()));

            match OutboundFrame::decode(&text) {
                Ok(OutboundFrame::GetStatus) => {
                    if let Some(delay) = options.status_delay {
                        std::thread::sleep(delay);
                    }
                    let status = serialize_state(&self.state.lock().unwrap());
                    self.send(&mut stream, BridgeMessage::Status(status))?;
                }
                Ok(OutboundFrame::Action(plan_text)) => {
                    let feedback = self.execute_plan_text(&plan_text);
                    actions_executed += 1;
                    if let Some((after, command)) = &options.inject_command_after_actions {
                        if actions_executed == *after {
                            self.send(&mut stream, BridgeMessage::Command(command.clone()))?;
                        }
                    }
                    if options.wrong_reply_to_action {
                        let status = serialize_state(&self.state.lock().unwrap());
                        self.send(&mut stream, BridgeMessage::Status(status))?;
                    } else {
                        self.send(&mut stream, BridgeMessage::Feedback(feedback))?;
                    }
                    if options.close_after_actions == Some(actions_executed) {
                        return Ok(());
                    }
                }
                Err(reason) => {
                    log::error!("environment closing on protocol violation: {reason}");
                    return Err(EnvError::Protocol(reason));
                }
            }
        }
    }

    fn execute_plan_text(&self, plan_text: &str) -> FeedbackPayload {
        let plan: PlanPayload = match serde_json::from_str(plan_text) {
            Ok(plan) => plan,
            Err(e) => {
                return FeedbackPayload {
                    logs: vec![],
                    errors: vec![format!("invalid plan payload: {e}")],
                }
            }
        };
        let mut state = self.state.lock().unwrap();
        let result = step(&state, &plan.action, &plan.parameters);
        *state = result.state;
        FeedbackPayload {
            logs: result.logs,
            errors: result.errors,
        }
    }

    fn send(&self, stream: &mut TcpStream, msg: BridgeMessage) -> Result<(), EnvError> {
        write_frame(stream, &encode_message(&msg)).map_err(EnvError::Wire)?;
        self.transcript
            .lock()
            .unwrap()
            .push(TranscriptEntry::ToAgent(msg));
        Ok(())
    }
}

fn connect_with_retry(addr: &str) -> Result<TcpStream, EnvError> {
    let mut last_err = None;
    for _ in 0..20 {
        match TcpStream::connect(addr) {
            Ok(stream) => return Ok(stream),
            Err(e) => {
                last_err = Some(e);
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
    Err(EnvError::Connect {
        addr: addr.to_string(),
        source: last_err.expect("at least one attempt"),
    })
}

/// Run the reference environment as a standalone process: load the
/// scenario, connect to the agent bridge, serve until disconnect.
pub fn run_env(addr: &str, scenario_path: &Path) -> Result<(), EnvError> {
    let harness = EnvHarness::from_scenario_file(scenario_path)?;
    harness.serve(addr)
}

/// Counts from a verified transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TranscriptStats {
    pub commands: u64,
    pub get_status: u64,
    pub statuses: u64,
    pub actions: u64,
    pub feedbacks: u64,
}

/// Audit a transcript against the protocol contract:
///
/// 1. the first message is the environment's start command `b`;
/// 2. outbound frames are byte-exactly `GetStatus` or `ACTION:`-prefixed;
/// 3. strict alternation: the agent never sends a second request while one
///    is pending, and every response matches the pending request's type
///    (commands may interleave at any point);
/// 4. nothing is dropped: every `GetStatus` got exactly one status, every
///    `ACTION:` exactly one feedback.
pub fn verify_transcript(entries: &[TranscriptEntry]) -> Result<TranscriptStats, String> {
    let mut stats = TranscriptStats::default();
    let mut pending: Option<&'static str> = None;

    match entries.first() {
        Some(TranscriptEntry::ToAgent(BridgeMessage::Command(cmd))) if cmd == "b" => {}
        other => {
            return Err(format!(
                "transcript must start with command \"b\", got {other:?}"
            ))
        }
    }

    for (idx, entry) in entries.iter().enumerate() {
        match entry {
            TranscriptEntry::ToEnv(text) => {
                if pending.is_some() {
                    return Err(format!(
                        "entry {idx}: agent sent {text:?} while a request was pending"
                    ));
                }
                if text == "GetStatus" {
                    stats.get_status += 1;
                    pending = Some("status");
                } else if text.as_bytes().starts_with(b"ACTION:") {
                    stats.actions += 1;
                    pending = Some("feedback");
                } else {
                    return Err(format!("entry {idx}: unrecognized outbound frame {text:?}"));
                }
            }
            TranscriptEntry::ToAgent(msg) => match msg {
                BridgeMessage::Command(_) => stats.commands += 1,
                BridgeMessage::Status(_) => {
                    if pending != Some("status") {
                        return Err(format!("entry {idx}: unsolicited status message"));
                    }
                    stats.statuses += 1;
                    pending = None;
                }
                BridgeMessage::Feedback(_) => {
                    if pending != Some("feedback") {
                        return Err(format!("entry {idx}: unsolicited feedback message"));
                    }
                    stats.feedbacks += 1;
                    pending = None;
                }
            },
        }
    }

    if pending.is_some() {
        return Err("transcript ends with an unanswered request".into());
    }
    if stats.get_status != stats.statuses {
        return Err(format!(
            "dropped messages: {} GetStatus vs {} statuses",
            stats.get_status, stats.statuses
        ));
    }
    if stats.actions != stats.feedbacks {
        return Err(format!(
            "dropped messages: {} actions vs {} feedbacks",
            stats.actions, stats.feedbacks
        ));
    }
    Ok(stats)
}
