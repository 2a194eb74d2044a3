//! Persistent memories and skills with vector embeddings, plus the three
//! retrieval channels used during planning: preferred memories (matched
//! against the active personality prompt), related memories (matched against
//! the current game state), and related skills (matched against the current
//! plan description).
//!
//! Retrieval is cosine top-k over an exhaustive scan. Collections here are
//! thousands of records, not millions, so a scan is both fast enough and
//! exactly reproducible; an external index can be slotted in behind
//! [`MemoryStore`] if that ever changes. Ties on equal scores go to the
//! earlier-inserted record.

mod embed;
mod store;

pub use embed::{embed_text, text_hash, EmbedError, Embedder, HashEmbedder};
pub use store::{delete_collection, MemoryStore};

use serde::{Deserialize, Serialize};

/// Default embedding dimension for the stub embedder.
pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("embedding failed for text {text_hash}: {source}")]
    Embed {
        text_hash: String,
        #[source]
        source: EmbedError,
    },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine is undefined for an all-zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("duplicate memory id {0:?}")]
    DuplicateId(String),
    #[error("preference summary must be non-empty")]
    EmptyPreferenceSummary,
    #[error("skill {skill:?} depends on unknown skill {dependency:?}")]
    UnknownDependency { skill: String, dependency: String },
    #[error("storing skill {skill:?} would create a dependency cycle")]
    DependencyCycle { skill: String },
    #[error("bad skill name {0:?}: use letters, digits, '_' or '-'")]
    BadSkillName(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
}

/// A fixed-dimension embedding. All components are finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MemoryError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity: dot(a,b) / (|a| |b|), in [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MemoryError> {
    if a.dim() != b.dim() {
        return Err(MemoryError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// How an executed plan turned out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Partial,
    Failure,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Outcome::Success => "success",
            Outcome::Partial => "partial",
            Outcome::Failure => "failure",
        };
        f.write_str(s)
    }
}

/// One stored interaction: what was planned, what happened, and how the
/// outcome reflects the active personality trait. Field order here is the
/// normative on-disk order for `memories.log` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: String,
    pub agent_name: String,
    pub iteration: u64,
    pub plan_summary: String,
    pub outcome: Outcome,
    pub context: String,
    pub game_state_snapshot: String,
    pub preference_summary: String,
    pub state_embedding: EmbeddingVector,
    pub preference_embedding: EmbeddingVector,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillOrigin {
    Basic,
    Synthesized,
}

/// A reusable piece of interaction code with a natural-language description.
/// Field order is the normative on-disk order for skill manifest lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub name: String,
    pub description: String,
    pub body: String,
    pub dependencies: Vec<String>,
    pub origin: SkillOrigin,
    pub refinement_count: u32,
    pub description_embedding: EmbeddingVector,
}

/// One retrieval result. Hit lists are sorted by non-increasing score.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub id: String,
    pub score: f64,
}
