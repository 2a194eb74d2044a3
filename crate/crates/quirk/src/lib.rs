//! Personality-driven LLM agent framework for automated game testing.
//!
//! The agent runs an iterative plan -> execute -> summarize -> remember loop
//! against any game environment that speaks the bridge wire protocol
//! (`docs/protocol.md`). All model calls go through the [`gateway`] module, so
//! the whole loop is testable offline with a scripted backend. A deterministic
//! reference environment ([`refenv`]) ships with the crate for end-to-end runs
//! without a real game.
//!
//! Module map:
//! - [`config`]: run settings from a key=value env file
//! - [`personality`]: trait prompts and per-game entity mappings
//! - [`gateway`]: instruction/code model completions, live or scripted
//! - [`memory`]: embedded vector store for memories and skills
//! - [`planner`]: hybrid bottom-up / top-down planning with validation
//! - [`summarizer`]: execution and personality-preference summaries
//! - [`bridge`]: the socket transport between agent and environment
//! - [`executor`]: plan translation and code-execution delegation
//! - [`refenv`]: the built-in grid-dungeon test environment
//! - [`session`]: the runner loop, lifecycle, and run reports

pub mod bridge;
pub mod config;
pub mod executor;
pub mod gateway;
pub mod memory;
pub mod personality;
pub mod planner;
pub mod refenv;
pub mod session;
pub mod summarizer;

pub use config::{ConfigError, ModelEndpoint, RunConfig};
pub use gateway::{Backend, CompletionRequest, CompletionResult, Gateway, ScriptedBackend};
pub use memory::{MemoryRecord, MemoryStore, RetrievalHit, SkillRecord};
pub use planner::{ActionPlan, Planner, TaskDecomposition};
pub use session::{run, RunReport, SessionHarness};
