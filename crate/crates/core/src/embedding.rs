//! Text embeddings and a brute-force cosine index.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::text;

pub const DEFAULT_DIM: usize = 256;

/// Dense vector; unit L2 norm, or all zeros for text without tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| f64::from(*v) * f64::from(*v)).sum())
    }

    /// Cosine similarity; zero whenever either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 || self.dim() != other.dim() {
            return 0.0;
        }
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding;
}

/// Bag-of-words embedder: each token is hashed into one of `dim` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut counts = vec![0.0f64; self.dim];
        for token in text::tokens(text) {
            counts[self.bucket(&token)] += 1.0;
        }
        let norm = libm::sqrt(counts.iter().map(|c| c * c).sum());
        if norm == 0.0 {
            return Embedding::zeros(self.dim);
        }
        Embedding(counts.into_iter().map(|c| (c / norm) as f32).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("vector for {id:?} has dimension {got}, index expects {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    entries: BTreeMap<String, Embedding>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces the vector for `id`.
    pub fn insert(&mut self, id: impl Into<String>, v: Embedding) -> Result<(), IndexError> {
        let id = id.into();
        if v.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                id,
                expected: self.dim,
                got: v.dim(),
            });
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<Embedding> {
        self.entries.remove(id)
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> &BTreeMap<String, Embedding> {
        &self.entries
    }

    /// Up to `k` ids by cosine descending, ties by id. Zero vectors never match.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Vec<(String, f64)> {
        if k == 0 || query.is_zero() {
            return Vec::new();
        }
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|(id, v)| (id.clone(), query.cosine(v)))
            .collect();
        // BTreeMap iteration is already id-ascending, so a stable sort keeps
        // lexicographic order among equal scores.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        scored
    }
}
