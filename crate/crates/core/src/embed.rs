//! Dense embeddings and the offline hash embedder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::normalize;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("embedding backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("expected a {expected}-dimensional embedding, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding backend returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding backend rejected the credential: {0}")]
    Auth(String),
}

/// A finite vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(values: Vec<f64>) -> Result<Self, EmbedError> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.values
    }
}

/// Cosine similarity clamped to `[-1, 1]`; 0 when either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    // + 0.0 folds -0.0 into 0.0 so ties rank by doc id
    (dot / denom).clamp(-1.0, 1.0) + 0.0
}

pub trait EmbedBackend: Send + Sync {
    /// Identifier recorded in index metadata; two backends with the same id
    /// must produce the same vectors.
    fn backend_id(&self) -> String;

    /// Output dimension, if already known.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

impl<B: EmbedBackend + ?Sized> EmbedBackend for &B {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

impl<B: EmbedBackend + ?Sized> EmbedBackend for alloc::boxed::Box<B> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

/// Seeded-hash bag-of-words projection.
///
/// Each normalized token is hashed with the seed; the digest picks four
/// coordinates and signed weights that are added to the vector. Empty text
/// maps to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

const PROJECTIONS: usize = 4;

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIM, DEFAULT_SEED)
    }
}

impl EmbedBackend for HashEmbedder {
    fn backend_id(&self) -> String {
        format!("hash:dim={}:seed={}", self.dim, self.seed)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut values = vec![0.0f64; self.dim];
        for token in normalize(text).tokens() {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(token.as_bytes());
            let digest = h.finalize();
            for p in digest.chunks_exact(8).take(PROJECTIONS) {
                let idx = u32::from_le_bytes([p[0], p[1], p[2], p[3]]) as usize % self.dim;
                let raw = u32::from_le_bytes([p[4], p[5], p[6], p[7]]);
                // map to [-1, 1]
                values[idx] += raw as f64 / u32::MAX as f64 * 2.0 - 1.0;
            }
        }
        Ok(EmbeddingVector { values })
    }
}
