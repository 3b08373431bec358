//! Embedding vectors and the deterministic hashing embedder.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default dimension of stub embeddings.
pub const DEFAULT_DIM: usize = 256;

/// Seed mixed into the FNV-1a offset basis for trigram hashing.
pub const STUB_HASH_SEED: u64 = 0x5151_0000_2024_0001;

/// Boundary sentinels used to pad text before trigram extraction.
pub const PAD_START: char = '\u{2}';
pub const PAD_END: char = '\u{3}';

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// A dense embedding. Either L2-normalized or all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    /// Normalizes `values` to unit length; non-finite or all-zero input
    /// yields the zero vector.
    pub fn normalized(values: Vec<f64>) -> Self {
        let norm = l2(&values);
        if !norm.is_finite() || norm == 0.0 {
            return Self::zeros(values.len());
        }
        Self { values: values.into_iter().map(|v| v / norm).collect() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity in `[-1, 1]`; 0 when either side is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!("cosine: dimension mismatch ({} vs {})", a.dim(), b.dim())));
    }
    Ok(cosine_slices(&a.values, &b.values))
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Lowercased character trigrams of `text`, padded with one boundary
/// sentinel on each side. Empty text has no trigrams.
pub fn char_trigrams(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = std::iter::once(PAD_START)
        .chain(text.chars().flat_map(char::to_lowercase))
        .chain(std::iter::once(PAD_END))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Seeded FNV-1a over the UTF-8 bytes of `s`.
pub fn trigram_hash(s: &str) -> u64 {
    let mut h = FNV_OFFSET ^ STUB_HASH_SEED;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashes character trigrams into `dim` buckets and L2-normalizes.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut values = vec![0.0; dim];
    for tri in char_trigrams(text) {
        values[(trigram_hash(&tri) % dim as u64) as usize] += 1.0;
    }
    EmbeddingVector::normalized(values)
}

/// Component-wise mean of `vectors` (not renormalized).
pub fn mean(vectors: &[EmbeddingVector]) -> Option<Vec<f64>> {
    let dim = vectors.first()?.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(&v.values) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    Some(acc.into_iter().map(|a| a / n).collect())
}
