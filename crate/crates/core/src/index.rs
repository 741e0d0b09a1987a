//! Exact cosine-similarity vector index.
//!
//! Search is a linear scan over every stored document. Results are ordered by
//! descending score with ties broken by ascending `doc_id`, so a query always
//! returns the same list regardless of insertion order.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::Chunk;
use crate::distill::{DocLevel, KnowledgeDoc};
use crate::embed::{cosine, EmbedBackend, EmbedError, EmbeddingVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Implicit,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Implicit => "implicit",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::Implicit => "Implicit",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMetadata {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<DocLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<usize>,
    pub method: Method,
}

/// A document waiting to be embedded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocInput {
    pub doc_id: String,
    pub text: String,
    pub metadata: DocMetadata,
}

impl DocInput {
    pub fn from_chunk(chunk: &Chunk) -> Self {
        DocInput {
            doc_id: chunk.doc_id.clone(),
            text: chunk.index_text(),
            metadata: DocMetadata {
                path: chunk.metadata.path.clone(),
                level: None,
                seq: Some(chunk.seq),
                method: Method::Baseline,
            },
        }
    }

    pub fn from_knowledge(doc: &KnowledgeDoc) -> Self {
        DocInput {
            doc_id: doc.display_path().to_string(),
            text: doc.markdown.clone(),
            metadata: DocMetadata {
                path: doc.path.clone(),
                level: Some(doc.level),
                seq: None,
                method: Method::Implicit,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDoc {
    pub doc_id: String,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub metadata: DocMetadata,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("duplicate doc id `{0}`")]
    DuplicateDocId(String),
    #[error("document `{doc_id}` has dimension {got}, index expects {expected}")]
    DimensionMismatch {
        doc_id: String,
        expected: usize,
        got: usize,
    },
    #[error("index was built with `{index}` but the query backend is `{query}`")]
    BackendMismatch { index: String, query: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    docs: Vec<IndexedDoc>,
    dim: usize,
    embed_backend_id: String,
    method: Method,
}

impl VectorIndex {
    /// Assembles an index from already-embedded documents, checking that ids
    /// are unique and dimensions agree. Documents are stored sorted by id.
    pub fn from_docs(
        mut docs: Vec<IndexedDoc>,
        dim: usize,
        embed_backend_id: impl Into<String>,
        method: Method,
    ) -> Result<Self, IndexError> {
        let mut seen = BTreeSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(IndexError::DuplicateDocId(d.doc_id.clone()));
            }
            if d.embedding.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    doc_id: d.doc_id.clone(),
                    expected: dim,
                    got: d.embedding.dim(),
                });
            }
        }
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Ok(VectorIndex {
            docs,
            dim,
            embed_backend_id: embed_backend_id.into(),
            method,
        })
    }

    pub fn docs(&self) -> &[IndexedDoc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_backend_id(&self) -> &str {
        &self.embed_backend_id
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn get(&self, doc_id: &str) -> Option<&IndexedDoc> {
        self.docs
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| &self.docs[i])
    }

    /// Top-`k` documents for a query vector.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<(&IndexedDoc, f64)>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if self.docs.is_empty() {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                doc_id: "<query>".to_string(),
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut scored: Vec<(&IndexedDoc, f64)> = self
            .docs
            .iter()
            .map(|d| (d, cosine(query, &d.embedding)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| a.0.doc_id.cmp(&b.0.doc_id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

/// Embeds every input and stores it. Input order does not matter.
pub fn build_index(
    inputs: Vec<DocInput>,
    backend: &dyn EmbedBackend,
    method: Method,
) -> Result<VectorIndex, IndexError> {
    let mut seen = BTreeSet::new();
    for d in &inputs {
        if !seen.insert(d.doc_id.clone()) {
            return Err(IndexError::DuplicateDocId(d.doc_id.clone()));
        }
    }
    let mut docs = Vec::with_capacity(inputs.len());
    let mut dim = backend.dim();
    for input in inputs {
        let embedding = backend.embed(&input.text)?;
        let expected = *dim.get_or_insert(embedding.dim());
        if embedding.dim() != expected {
            return Err(IndexError::DimensionMismatch {
                doc_id: input.doc_id,
                expected,
                got: embedding.dim(),
            });
        }
        docs.push(IndexedDoc {
            doc_id: input.doc_id,
            text: input.text,
            embedding,
            metadata: input.metadata,
        });
    }
    let dim = match dim {
        Some(d) => d,
        None => backend.embed("")?.dim(),
    };
    VectorIndex::from_docs(docs, dim, backend.backend_id(), method)
}

/// Embeds `query` and returns the `min(k, len)` most similar documents.
pub fn retrieve<'a>(
    index: &'a VectorIndex,
    query: &str,
    k: usize,
    backend: &dyn EmbedBackend,
) -> Result<Vec<(&'a IndexedDoc, f64)>, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    let backend_id = backend.backend_id();
    if backend_id != index.embed_backend_id {
        return Err(IndexError::BackendMismatch {
            index: index.embed_backend_id.clone(),
            query: backend_id,
        });
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let q = backend.embed(query)?;
    index.search(&q, k)
}
