//! Corpus to dual index: classify each document, chunk it, embed the chunks,
//! and insert into the doctor and/or pharmacist index per its domain target.
//!
//! A document routed to both indexes contributes the identical chunk ids and
//! vectors to each; the embedding is computed once.

use super::{
    chunk_document, classify_document, Chunk, ChunkParams, DomainAssignment, DomainTarget, KbError,
    Lexicon, SourceDocument, VectorIndex,
};
use crate::llm::{embed, ChatBackend, EmbeddingBackend, RetryPolicy};
use crate::types::Role;

/// Where one document ended up and why.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DocAssignment {
    pub doc_id: String,
    pub target: DomainTarget,
    pub rationale: String,
    pub chunk_count: usize,
}

/// Output of a knowledge base build.
#[derive(Debug, Clone)]
pub struct KbBuild {
    pub doctor: VectorIndex,
    pub pharmacist: VectorIndex,
    pub assignments: Vec<DocAssignment>,
}

pub fn build_indexes(
    corpus: &[SourceDocument],
    classifier: Option<&dyn ChatBackend>,
    lexicon: &Lexicon,
    embedder: &dyn EmbeddingBackend,
    params: &ChunkParams,
    retry: &RetryPolicy,
) -> Result<KbBuild, KbError> {
    if corpus.is_empty() {
        return Err(KbError::EmptyCorpus);
    }
    params.validate()?;

    let mut seen = std::collections::BTreeSet::new();
    for doc in corpus {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(KbError::DuplicateDoc {
                doc_id: doc.doc_id.clone(),
            });
        }
    }

    let dim = embedder.dim();
    let mut doctor = VectorIndex::new(Role::Doctor, dim);
    let mut pharmacist = VectorIndex::new(Role::Pharmacist, dim);
    let mut assignments = Vec::with_capacity(corpus.len());

    for doc in corpus {
        let DomainAssignment { target, rationale } =
            classify_document(doc, classifier, lexicon, retry)?;
        let chunks = chunk_document(doc, params)?;
        let chunk_count = chunks.len();
        for chunk in chunks {
            let vector = embed_chunk(embedder, &chunk, retry)?;
            if target.includes(Role::Doctor) {
                doctor.insert(chunk.clone(), vector.clone())?;
            }
            if target.includes(Role::Pharmacist) {
                pharmacist.insert(chunk, vector)?;
            }
        }
        assignments.push(DocAssignment {
            doc_id: doc.doc_id.clone(),
            target,
            rationale,
            chunk_count,
        });
    }

    Ok(KbBuild {
        doctor,
        pharmacist,
        assignments,
    })
}

/// Chunks are embedded one call each so a failure names the exact chunk.
fn embed_chunk(
    embedder: &dyn EmbeddingBackend,
    chunk: &Chunk,
    retry: &RetryPolicy,
) -> Result<super::EmbeddingVector, KbError> {
    embed(embedder, &[chunk.text.as_str()], retry)
        .map(|mut v| v.remove(0))
        .map_err(|source| KbError::Embedding {
            chunk_id: chunk.chunk_id.clone(),
            source,
        })
}
