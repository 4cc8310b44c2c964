//! Two-stage role-aware retrieval: exact cosine scan over the role's index
//! (coarse recall, top K) followed by pointwise reranking (top N).
//!
//! Ordering is fully deterministic: scores sort descending and ties break by
//! chunk id ascending, at both stages. If the rerank backend fails the search
//! degrades to coarse order instead of failing the consultation; the result
//! is flagged and coarse scores are mapped into the rerank scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EmbeddingVector, IndexPair, VectorIndex};
use crate::llm::{embed, EmbeddingBackend, LlmError, RerankBackend, RetryPolicy};
use crate::types::Role;

/// Stage sizes. K bounds the coarse scan, N the reranked tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub top_k: usize,
    pub top_n: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            top_k: 20,
            top_n: 5,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.top_n == 0 || self.top_n > self.top_k {
            return Err(RetrievalError::BadParams(format!(
                "need 1 <= top_n <= top_k, got top_n={} top_k={}",
                self.top_n, self.top_k
            )));
        }
        Ok(())
    }
}

/// One search request against a role's knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub text: String,
    pub role: Role,
    /// Reflection round that issued the query; 0 for the initial plan.
    pub round: u32,
}

/// One retrieved chunk with scores from both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub chunk_id: String,
    pub text: String,
    /// Cosine similarity in [-1, 1].
    pub coarse_score: f32,
    /// Reranker relevance in [0, 1]; on a degraded search this is the coarse
    /// score mapped by (c + 1) / 2.
    pub rerank_score: f32,
    /// 1-based position after the final ordering.
    pub rank: usize,
}

/// Outcome of one two-stage search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: RetrievalQuery,
    pub docs: Vec<RetrievedDoc>,
    pub params: RetrievalParams,
    /// True when the rerank stage failed and coarse order was used instead.
    pub degraded: bool,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid retrieval params: {0}")]
    BadParams(String),
    #[error("query/index dim mismatch: index {index_dim}, query {query_dim}")]
    DimMismatch { index_dim: usize, query_dim: usize },
    #[error("query embedding failed: {0}")]
    Embedding(#[from] LlmError),
}

/// The instruction handed to the reranker; it steers relevance toward the
/// role's information need.
pub fn render_instruction(role: Role) -> String {
    match role {
        Role::Doctor => {
            "Given a clinical question, judge how well the passage covers disease symptoms, \
             diagnostic criteria, and differential diagnosis."
        }
        Role::Pharmacist => {
            "Given a clinical question, judge how well the passage covers drug mechanisms, \
             indications, contraindications, and interactions."
        }
    }
    .to_string()
}

/// Exact cosine scan: every entry is scored and the top `k` returned, ordered
/// by score descending, chunk id ascending on ties. Scores are clamped to
/// [-1, 1] to absorb float drift in unit-vector dots.
pub fn coarse_recall(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<(String, f32)>, RetrievalError> {
    if query.dim() != index.dim() {
        return Err(RetrievalError::DimMismatch {
            index_dim: index.dim(),
            query_dim: query.dim(),
        });
    }
    let mut scored: Vec<(String, f32)> = index
        .entries()
        .map(|(chunk_id, vector)| {
            let score = (query.dot(vector) as f32).clamp(-1.0, 1.0);
            (chunk_id.to_string(), score)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("clamped scores are comparable")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Rerank coarse candidates and keep the top `n`. Candidates are deduped by
/// chunk id (first occurrence wins; callers pass them in coarse order). Any
/// scorer failure degrades the whole search to coarse order.
fn rerank_stage(
    reranker: &dyn RerankBackend,
    instruction: &str,
    query_text: &str,
    index: &VectorIndex,
    coarse: &[(String, f32)],
    n: usize,
) -> (Vec<RetrievedDoc>, bool) {
    let mut seen = std::collections::BTreeSet::new();
    let candidates: Vec<&(String, f32)> = coarse
        .iter()
        .filter(|(id, _)| seen.insert(id.clone()))
        .collect();

    let mut scored = Vec::with_capacity(candidates.len());
    for (chunk_id, coarse_score) in &candidates {
        let text = &index.chunk(chunk_id).expect("coarse hits resolve").text;
        match reranker.score(instruction, query_text, text) {
            Ok(s) => scored.push((chunk_id.clone(), *coarse_score, s.clamp(0.0, 1.0))),
            Err(err) => {
                log::warn!("rerank failed on {chunk_id}, degrading to coarse order: {err}");
                let docs = candidates
                    .iter()
                    .take(n)
                    .enumerate()
                    .map(|(i, (chunk_id, coarse_score))| RetrievedDoc {
                        chunk_id: chunk_id.clone(),
                        text: index
                            .chunk(chunk_id)
                            .expect("coarse hits resolve")
                            .text
                            .clone(),
                        coarse_score: *coarse_score,
                        rerank_score: (coarse_score + 1.0) / 2.0,
                        rank: i + 1,
                    })
                    .collect();
                return (docs, true);
            }
        }
    }

    scored.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("clamped scores are comparable")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(n);
    let docs = scored
        .into_iter()
        .enumerate()
        .map(|(i, (chunk_id, coarse_score, rerank_score))| RetrievedDoc {
            text: index
                .chunk(&chunk_id)
                .expect("coarse hits resolve")
                .text
                .clone(),
            chunk_id,
            coarse_score,
            rerank_score,
            rank: i + 1,
        })
        .collect();
    (docs, false)
}

/// Run a full two-stage search for one query against the query's role index.
/// Role isolation is structural: the other role's index is never touched.
pub fn search(
    indexes: &IndexPair,
    embedder: &dyn EmbeddingBackend,
    reranker: &dyn RerankBackend,
    query: &RetrievalQuery,
    params: &RetrievalParams,
    retry: &RetryPolicy,
) -> Result<RetrievalResult, RetrievalError> {
    params.validate()?;
    let index = indexes.for_role(query.role);
    if index.is_empty() {
        return Ok(RetrievalResult {
            query: query.clone(),
            docs: Vec::new(),
            params: *params,
            degraded: false,
        });
    }
    let query_vector = embed(embedder, &[query.text.as_str()], retry)?.remove(0);
    let coarse = coarse_recall(index, &query_vector, params.top_k)?;
    let instruction = render_instruction(query.role);
    let (docs, degraded) = rerank_stage(
        reranker,
        &instruction,
        &query.text,
        index,
        &coarse,
        params.top_n,
    );
    Ok(RetrievalResult {
        query: query.clone(),
        docs,
        params: *params,
        degraded,
    })
}
