//! Text embedding providers for semantic matching.
//!
//! The default provider is a deterministic hash-bag embedder: lowercase the
//! text, split on non-alphanumeric characters, hash each token into one of
//! `D` buckets, count, and L2-normalize. Disjoint token sets map to
//! orthogonal vectors (up to bucket collisions), which keeps routing
//! reproducible and interpretable in tests. A remote embedding service can
//! be dropped in behind the same trait.

use crate::error::{FabricError, Result};

pub const DEFAULT_DIM: usize = 256;

/// Deterministic text-to-unit-vector mapping. Same text must always produce
/// the same vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Token-count embedder over hashed buckets. Empty or token-free text maps
/// to the zero vector, which never matches anything.
#[derive(Debug, Clone)]
pub struct HashBagEmbedder {
    dim: usize,
}

impl Default for HashBagEmbedder {
    fn default() -> Self {
        HashBagEmbedder { dim: DEFAULT_DIM }
    }
}

impl HashBagEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashBagEmbedder { dim }
    }
}

/// FNV-1a 64-bit; stable across platforms and runs, unlike the std hasher.
fn fnv1a(token: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in token.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl EmbeddingProvider for HashBagEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0f64; self.dim];
        let mut any = false;
        for token in tokenize(text) {
            let bucket = (fnv1a(&token) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
            any = true;
        }
        if !any {
            return counts;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in &mut counts {
            *c /= norm;
        }
        counts
    }
}

/// Cosine similarity of two equal-dimension vectors. Either operand being
/// the zero vector yields −1.0 (a score that never passes any gate).
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FabricError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(-1.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}
