//! Role-specific knowledge bases: domain classification, chunking, embedding,
//! dual indexing, and persistence.

mod build;
mod chunk;
mod classify;
mod store;

pub use build::{build_indexes, DocAssignment, KbBuild};
pub use chunk::{chunk_document, stitch, ChunkParams};
pub use classify::{classify_document, classify_with_lexicon, Lexicon};
pub use store::{load_index, persist_index, StoreError, INDEX_FORMAT_VERSION};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Role;

/// One corpus document prior to chunking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SourceDocument {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.doc_id.trim().is_empty() {
            return Err(KbError::InvalidDocument {
                doc_id: self.doc_id.clone(),
                message: "doc_id must be non-empty".into(),
            });
        }
        if self.body.is_empty() {
            return Err(KbError::InvalidDocument {
                doc_id: self.doc_id.clone(),
                message: "body must be non-empty".into(),
            });
        }
        Ok(())
    }
}

/// Which knowledge base(s) a document is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTarget {
    DoctorOnly,
    PharmacistOnly,
    Both,
}

impl DomainTarget {
    pub fn includes(&self, role: Role) -> bool {
        matches!(
            (self, role),
            (DomainTarget::Both, _)
                | (DomainTarget::DoctorOnly, Role::Doctor)
                | (DomainTarget::PharmacistOnly, Role::Pharmacist)
        )
    }
}

/// Classification outcome for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAssignment {
    pub target: DomainTarget,
    pub rationale: String,
}

/// An embedded text unit. Spans are char offsets into the source body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Fixed-length real vector, L2-normalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Wrap pre-normalized values; rejects non-finite entries and norms far
    /// from 1.
    pub fn new(values: Vec<f32>) -> Result<Self, KbError> {
        if values.is_empty() {
            return Err(KbError::InvalidVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KbError::InvalidVector("non-finite entry".into()));
        }
        let v = Self { values };
        if (v.norm() - 1.0).abs() > 1e-6 {
            return Err(KbError::InvalidVector(format!("L2 norm {} != 1", v.norm())));
        }
        Ok(v)
    }

    /// Normalize raw values to unit length.
    pub fn normalized(values: Vec<f32>) -> Result<Self, KbError> {
        if values.is_empty() {
            return Err(KbError::InvalidVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KbError::InvalidVector("non-finite entry".into()));
        }
        let norm = values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt();
        if norm < 1e-12 {
            return Err(KbError::InvalidVector(
                "zero vector cannot be normalized".into(),
            ));
        }
        let values = values.iter().map(|v| ((*v as f64) / norm) as f32).collect();
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Dot product; equals cosine similarity for unit vectors.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    }
}

/// Role-scoped searchable store over chunks. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    role_scope: Role,
    dim: usize,
    entries: Vec<(String, EmbeddingVector)>,
    chunk_store: BTreeMap<String, Chunk>,
}

impl VectorIndex {
    pub fn new(role_scope: Role, dim: usize) -> Self {
        Self {
            role_scope,
            dim,
            entries: Vec::new(),
            chunk_store: BTreeMap::new(),
        }
    }

    pub fn role_scope(&self) -> Role {
        self.role_scope
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

    pub fn insert(&mut self, chunk: Chunk, vector: EmbeddingVector) -> Result<(), KbError> {
        if vector.dim() != self.dim {
            return Err(KbError::DimMismatch {
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.chunk_store.contains_key(&chunk.chunk_id) {
            return Err(KbError::DuplicateChunk {
                chunk_id: chunk.chunk_id,
            });
        }
        self.entries.push((chunk.chunk_id.clone(), vector));
        self.chunk_store.insert(chunk.chunk_id.clone(), chunk);
        Ok(())
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_store.get(chunk_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(id, v)| (id.as_str(), v))
    }

    pub fn chunk_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }

    /// Structural invariants: unique chunk ids, every entry resolvable, shared
    /// dim. Used after loading from disk.
    pub fn validate(&self) -> Result<(), KbError> {
        if self.entries.len() != self.chunk_store.len() {
            return Err(KbError::Corrupt("entry/chunk count mismatch".into()));
        }
        for (chunk_id, vector) in &self.entries {
            if vector.dim() != self.dim {
                return Err(KbError::DimMismatch {
                    expected: self.dim,
                    found: vector.dim(),
                });
            }
            if !self.chunk_store.contains_key(chunk_id) {
                return Err(KbError::Corrupt(format!(
                    "entry {chunk_id} missing from chunk store"
                )));
            }
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn from_parts(
        role_scope: Role,
        dim: usize,
        entries: Vec<(String, EmbeddingVector)>,
        chunk_store: BTreeMap<String, Chunk>,
    ) -> Self {
        Self {
            role_scope,
            dim,
            entries,
            chunk_store,
        }
    }
}

/// The doctor and pharmacist indexes, loaded together.
#[derive(Debug, Clone)]
pub struct IndexPair {
    pub doctor: VectorIndex,
    pub pharmacist: VectorIndex,
}

impl IndexPair {
    pub fn for_role(&self, role: Role) -> &VectorIndex {
        match role {
            Role::Doctor => &self.doctor,
            Role::Pharmacist => &self.pharmacist,
        }
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("invalid document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },
    #[error("invalid chunk params: {0}")]
    InvalidChunkParams(String),
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("duplicate chunk id {chunk_id}")]
    DuplicateChunk { chunk_id: String },
    #[error("duplicate doc id {doc_id}")]
    DuplicateDoc { doc_id: String },
    #[error("vector dim mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("classification failed for {doc_id}: {source}")]
    Classification {
        doc_id: String,
        #[source]
        source: crate::llm::LlmError,
    },
    #[error("embedding failed for chunk {chunk_id}: {source}")]
    Embedding {
        chunk_id: String,
        #[source]
        source: crate::llm::LlmError,
    },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}
