//! The five-verb skill DSL and its interpreter, the reference
//! [`CodeExecutor`]. One statement per line:
//!
//! ```text
//! move <north|south|east|west>
//! attack [<enemy-id>|<direction>]
//! pickup
//! wait
//! call <skill-name>
//! ```
//!
//! Lines starting with `#` are comments. Execution stops at the first
//! failing statement; the interpreter enforces a step ceiling and the
//! caller's wall-clock timeout, and either limit reports `timed_out`.
//! Unbounded programs are possible through recursive `call`.

use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::executor::{CodeExecution, CodeExecutor, NamedProgram};

use super::{serialize_state, step, DungeonState};

/// Hard ceiling on interpreted statements per execution.
pub const MAX_INTERPRETED_STEPS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DslStatement {
    Move(String),
    Attack(Option<String>),
    Pickup,
    Wait,
    Call(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DslProgram {
    pub statements: Vec<DslStatement>,
}

const DIRECTIONS: [&str; 4] = ["north", "south", "east", "west"];

/// Parse a script. Errors name the offending line.
pub fn parse_program(code: &str) -> Result<DslProgram, String> {
    let mut statements = Vec::new();
    for (idx, raw) in code.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let verb = tokens.next().expect("non-empty line");
        let arg = tokens.next();
        if tokens.next().is_some() {
            return Err(format!("line {}: too many tokens in {line:?}", idx + 1));
        }
        let statement = match (verb, arg) {
            ("move", Some(dir)) if DIRECTIONS.contains(&dir) => DslStatement::Move(dir.into()),
            ("move", Some(dir)) => {
                return Err(format!("line {}: unknown direction {dir:?}", idx + 1))
            }
            ("move", None) => return Err(format!("line {}: move needs a direction", idx + 1)),
            ("attack", arg) => DslStatement::Attack(arg.map(String::from)),
            ("pickup", None) => DslStatement::Pickup,
            ("wait", None) => DslStatement::Wait,
            ("call", Some(name)) => DslStatement::Call(name.into()),
            ("call", None) => return Err(format!("line {}: call needs a skill name", idx + 1)),
            (other, _) => return Err(format!("line {}: unknown verb {other:?}", idx + 1)),
        };
        statements.push(statement);
    }
    Ok(DslProgram { statements })
}

fn statement_params(
    statement: &DslStatement,
) -> (&'static str, serde_json::Map<String, serde_json::Value>) {
    let mut params = serde_json::Map::new();
    match statement {
        DslStatement::Move(dir) => {
            params.insert("dir".into(), serde_json::Value::String(dir.clone()));
            ("move", params)
        }
        DslStatement::Attack(arg) => {
            if let Some(arg) = arg {
                params.insert("target".into(), serde_json::Value::String(arg.clone()));
            }
            ("attack", params)
        }
        DslStatement::Pickup => ("pickup", params),
        DslStatement::Wait => ("wait", params),
        DslStatement::Call(_) => unreachable!("call handled by the frame stack"),
    }
}

/// Interprets DSL scripts against a shared dungeon state. Cloning the
/// executor shares the state, so the environment harness and the agent's
/// code path see the same world.
#[derive(Clone)]
pub struct DslExecutor {
    state: Arc<Mutex<DungeonState>>,
}

impl DslExecutor {
    pub fn new(state: Arc<Mutex<DungeonState>>) -> Self {
        DslExecutor { state }
    }

    pub fn state(&self) -> Arc<Mutex<DungeonState>> {
        Arc::clone(&self.state)
    }
}

struct Frame {
    statements: Rc<Vec<DslStatement>>,
    pc: usize,
}

impl CodeExecutor for DslExecutor {
    fn execute(&self, code: &str, programs: &[NamedProgram], timeout: Duration) -> CodeExecution {
        let started = Instant::now();
        let mut logs: Vec<String> = Vec::new();
        let mut errors: Vec<String> = Vec::new();
        let mut timed_out = false;

        let main = match parse_program(code) {
            Ok(program) => program,
            Err(reason) => {
                let observation = serialize_state(&self.state.lock().unwrap());
                return CodeExecution {
                    observation,
                    timed_out: false,
                    logs,
                    errors: vec![format!("parse error: {reason}")],
                };
            }
        };

        // Helper bodies parse lazily so an unused broken helper does not
        // fail the run.
        let mut parsed: BTreeMap<String, Rc<Vec<DslStatement>>> = BTreeMap::new();
        let mut steps: u64 = 0;
        // Frame stack instead of recursion: recursive `call` chains are
        // bounded by the step ceiling, not the thread stack.
        let mut stack = vec![Frame {
            statements: Rc::new(main.statements),
            pc: 0,
        }];

        'run: while let Some(frame) = stack.last_mut() {
            if frame.pc >= frame.statements.len() {
                stack.pop();
                continue;
            }
            if steps >= MAX_INTERPRETED_STEPS || started.elapsed() >= timeout {
                timed_out = true;
                break 'run;
            }
            let statement = frame.statements[frame.pc].clone();
            frame.pc += 1;
            steps += 1;

            match &statement {
                DslStatement::Call(name) => {
                    logs.push(format!("calling helper: {name}"));
                    let body = match parsed.get(name) {
                        Some(body) => Rc::clone(body),
                        None => {
                            let Some(program) = programs.iter().find(|p| p.name == *name) else {
                                errors.push(format!("unknown helper: {name}"));
                                break 'run;
                            };
                            match parse_program(&program.body) {
                                Ok(p) => {
                                    let body = Rc::new(p.statements);
                                    parsed.insert(name.clone(), Rc::clone(&body));
                                    body
                                }
                                Err(reason) => {
                                    errors.push(format!("helper {name}: parse error: {reason}"));
                                    break 'run;
                                }
                            }
                        }
                    };
                    stack.push(Frame {
                        statements: body,
                        pc: 0,
                    });
                }
                other => {
                    let (action, params) = statement_params(other);
                    let mut state = self.state.lock().unwrap();
                    let result = step(&state, action, &params);
                    *state = result.state;
                    drop(state);
                    logs.extend(result.logs);
                    if !result.errors.is_empty() {
                        errors.extend(result.errors);
                        break 'run;
                    }
                }
            }
        }

        if timed_out {
            errors.push(format!(
                "timeout: stopped after {steps} steps / {:?}",
                started.elapsed()
            ));
        }
        let observation = serialize_state(&self.state.lock().unwrap());
        CodeExecution {
            observation,
            timed_out,
            logs,
            errors,
        }
    }
}
