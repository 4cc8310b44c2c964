//! Backend abstraction: chat completion, embedding, rerank scoring, and
//! judging, plus deterministic mocks for offline runs.
//!
//! Every chat reply that enters the pipeline is parsed and schema-validated
//! here; no raw backend text crosses module boundaries. Parse or validation
//! failures get exactly one repair round (a re-prompt carrying the error),
//! transport failures get bounded retries with exponential backoff.

pub mod http;
pub mod mock;
pub mod payloads;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::EmbeddingVector;
pub use payloads::{
    AdoptionPayload, ClassifyPayload, ConfidencePayload, DiagnosisEntry, DiagnosisPayload,
    JudgePayload, MedicationEntry, MedicationPayload, PlanPayload, QueriesPayload, SchemaPayload,
};

/// Names the structured output a chat call is expected to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemaTag {
    Plan,
    Queries,
    Confidence,
    Diagnosis,
    Adoption,
    Medication,
    Judge,
    Classify,
}

impl SchemaTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemaTag::Plan => "Plan",
            SchemaTag::Queries => "Queries",
            SchemaTag::Confidence => "Confidence",
            SchemaTag::Diagnosis => "Diagnosis",
            SchemaTag::Adoption => "Adoption",
            SchemaTag::Medication => "Medication",
            SchemaTag::Judge => "Judge",
            SchemaTag::Classify => "Classify",
        }
    }
}

/// One chat-completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub schema_tag: SchemaTag,
    pub temperature: f32,
}

impl ChatRequest {
    pub fn new(
        schema_tag: SchemaTag,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            schema_tag,
            temperature: 0.0,
        }
    }

    /// System and user prompt joined, as seen by prompt matchers.
    pub fn full_prompt(&self) -> String {
        format!("{}\n{}", self.system_prompt, self.user_prompt)
    }
}

/// A parsed, schema-validated chat reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub schema_tag: SchemaTag,
    pub payload: SchemaPayload,
    pub raw: String,
    /// Number of repair rounds it took to obtain a valid payload (0 or 1).
    pub repair_count: u32,
}

/// Judge rubric dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JudgeRubric {
    /// Topical alignment between document and question.
    Relevance,
    /// Support toward the gold answer; requires the gold text.
    Contribution,
}

/// Transport-level backend failure.
#[derive(Debug, Error)]
pub enum BackendError {
    /// Retryable: network trouble, 5xx, timeouts.
    #[error("transport error: {0}")]
    Transport(String),
    /// Not retryable: malformed wire payloads, auth failures, 4xx.
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Errors surfaced by the llm operations.
#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("{tag:?} reply failed schema validation after repair: {message}")]
    SchemaAfterRepair { tag: SchemaTag, message: String },
    #[error("embedding batch was empty")]
    EmptyEmbedBatch,
    #[error("embedding {index} invalid: {message}")]
    BadEmbedding { index: usize, message: String },
    #[error("judge rubric Contribution requires a gold answer")]
    MissingGold,
    #[error("judge returned {got} score(s) for {expected} document(s)")]
    JudgeArity { expected: usize, got: usize },
    #[error("judge score {score} out of range 0..=10")]
    JudgeRange { score: u32 },
}

/// Chat completion backend. Implementations must be safe under concurrent
/// calls or serialize internally.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// Text embedding backend with a fixed output dimensionality.
pub trait EmbeddingBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError>;
}

/// Relevance scorer for reranking: instruction + query + passage -> [0, 1].
pub trait RerankBackend: Send + Sync {
    fn score(&self, instruction: &str, query: &str, passage: &str) -> Result<f32, BackendError>;
}

/// Judge backend scoring each item 0..=10 under a rubric.
pub trait JudgeBackend: Send + Sync {
    fn judge(
        &self,
        question: &str,
        items: &[&str],
        rubric: JudgeRubric,
        gold: Option<&str>,
    ) -> Result<Vec<u8>, BackendError>;
}

/// Retry budget for transport failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 100,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; used throughout the test suites.
    pub fn immediate() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 0,
        }
    }
}

/// Marker inserted into repair prompts; mock scripts can match on it.
pub const REPAIR_MARKER: &str = "REPAIR REQUEST";

fn call_with_retry(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    retry: &RetryPolicy,
) -> Result<String, LlmError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.chat(request) {
            Ok(text) => return Ok(text),
            Err(err @ BackendError::Transport(_)) if attempt < retry.max_attempts => {
                let delay = retry.base_delay_ms.saturating_mul(1u64 << (attempt - 1));
                log::warn!("chat attempt {attempt} failed, retrying in {delay}ms: {err}");
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(source) => {
                return Err(LlmError::Backend {
                    attempts: attempt,
                    source,
                })
            }
        }
    }
}

/// Run a chat completion and return its schema-validated payload.
///
/// On parse or validation failure the backend is re-prompted once with the
/// validation error appended; a second failure is a hard error.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    retry: &RetryPolicy,
) -> Result<StructuredOutput, LlmError> {
    let raw = call_with_retry(backend, request, retry)?;
    match payloads::parse_and_validate(request.schema_tag, &raw) {
        Ok(payload) => Ok(StructuredOutput {
            schema_tag: request.schema_tag,
            payload,
            raw,
            repair_count: 0,
        }),
        Err(first_err) => {
            let repair = ChatRequest {
                user_prompt: format!(
                    "{}\n\n{REPAIR_MARKER}: your previous reply was rejected ({first_err}). \
                     Respond again with a single JSON object valid for the {} schema.",
                    request.user_prompt,
                    request.schema_tag.as_str(),
                ),
                ..request.clone()
            };
            let raw2 = call_with_retry(backend, &repair, retry)?;
            match payloads::parse_and_validate(request.schema_tag, &raw2) {
                Ok(payload) => Ok(StructuredOutput {
                    schema_tag: request.schema_tag,
                    payload,
                    raw: raw2,
                    repair_count: 1,
                }),
                Err(second_err) => Err(LlmError::SchemaAfterRepair {
                    tag: request.schema_tag,
                    message: second_err,
                }),
            }
        }
    }
}

/// Embed a non-empty batch of texts: one L2-normalized vector per input, in
/// input order.
pub fn embed(
    backend: &dyn EmbeddingBackend,
    texts: &[&str],
    retry: &RetryPolicy,
) -> Result<Vec<EmbeddingVector>, LlmError> {
    if texts.is_empty() {
        return Err(LlmError::EmptyEmbedBatch);
    }
    let mut attempt = 0;
    let raw = loop {
        attempt += 1;
        match backend.embed(texts) {
            Ok(v) => break v,
            Err(err @ BackendError::Transport(_)) if attempt < retry.max_attempts => {
                let delay = retry.base_delay_ms.saturating_mul(1u64 << (attempt - 1));
                log::warn!("embed attempt {attempt} failed, retrying in {delay}ms: {err}");
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(source) => {
                return Err(LlmError::Backend {
                    attempts: attempt,
                    source,
                })
            }
        }
    };
    if raw.len() != texts.len() {
        return Err(LlmError::BadEmbedding {
            index: raw.len(),
            message: format!("expected {} vectors, got {}", texts.len(), raw.len()),
        });
    }
    let dim = backend.dim();
    raw.into_iter()
        .enumerate()
        .map(|(i, values)| {
            if values.len() != dim {
                return Err(LlmError::BadEmbedding {
                    index: i,
                    message: format!("expected dim {dim}, got {}", values.len()),
                });
            }
            EmbeddingVector::normalized(values).map_err(|e| LlmError::BadEmbedding {
                index: i,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Score each item 0..=10 under the rubric; the empty list scores to an empty
/// list without touching the backend.
pub fn judge(
    backend: &dyn JudgeBackend,
    question: &str,
    items: &[&str],
    rubric: JudgeRubric,
    gold: Option<&str>,
) -> Result<Vec<u8>, LlmError> {
    if rubric == JudgeRubric::Contribution && gold.is_none() {
        return Err(LlmError::MissingGold);
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let scores = backend
        .judge(question, items, rubric, gold)
        .map_err(|source| LlmError::Backend {
            attempts: 1,
            source,
        })?;
    if scores.len() != items.len() {
        return Err(LlmError::JudgeArity {
            expected: items.len(),
            got: scores.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|&&s| s > 10) {
        return Err(LlmError::JudgeRange { score: bad as u32 });
    }
    Ok(scores)
}
