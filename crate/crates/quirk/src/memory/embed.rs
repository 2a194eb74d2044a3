//! Text embedders. The framework treats the embedder as a seam: anything
//! deterministic that maps text to a fixed-dimension vector works. The
//! shipped [`HashEmbedder`] is a seeded token-hash bag, good enough for
//! retrieval semantics and fully offline.

use super::{EmbeddingVector, MemoryError};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedder backend failed: {0}")]
    Backend(String),
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// FNV-1a 64-bit over `seed || bytes`. Stable across platforms and releases,
/// unlike the std hasher.
pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for b in seed.to_le_bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Short stable digest of a text, used in errors instead of the text itself.
pub fn text_hash(text: &str) -> String {
    format!("{:016x}", fnv1a(0, text.as_bytes()))
}

/// Seeded hash bag over whitespace tokens, L2-normalized. Each token adds
/// +/-1 (sign from its hash) at a hashed index, so the embedding is
/// deterministic and order-insensitive within a token multiset.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { seed, dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(0, super::DEFAULT_EMBED_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut values = vec![0.0f64; self.dim];
        for token in text.split_whitespace() {
            let hash = fnv1a(self.seed, token.as_bytes());
            let index = (hash % self.dim as u64) as usize;
            let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
            values[index] += sign;
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Tokens cancelled out (or the text was all whitespace); fall
            // back to a one-hot on the whole text so the vector is usable.
            let index = (fnv1a(self.seed, text.as_bytes()) % self.dim as u64) as usize;
            values[index] = 1.0;
        } else {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector::new(values).map_err(|_| EmbedError::Backend("non-finite values".into()))
    }
}

/// Embed via `embedder`, wrapping failures with a hash of the text (never
/// the text itself).
pub fn embed_text(
    embedder: &dyn Embedder,
    text: &str,
) -> Result<EmbeddingVector, MemoryError> {
    embedder.embed(text).map_err(|source| MemoryError::Embed {
        text_hash: text_hash(text),
        source,
    })
}
