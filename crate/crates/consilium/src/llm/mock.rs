//! Deterministic scripted backends. With these in place the whole pipeline is
//! a pure function of (inputs, script, seed).
//!
//! A chat script is an ordered rule list; the first rule whose schema tag
//! matches the request and whose `match` substrings all occur in the joined
//! system+user prompt wins. With no matching rule, a fixed per-tag default
//! payload keeps the pipeline total. Script files are line-delimited JSON,
//! one rule per line.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, ChatBackend, ChatRequest, EmbeddingBackend, JudgeBackend, JudgeRubric,
    RerankBackend, SchemaTag,
};
use crate::text::token_jaccard;

/// One scripted chat behavior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    pub tag: SchemaTag,
    /// All substrings must occur in the joined prompt for the rule to fire.
    #[serde(default, rename = "match")]
    pub matches: Vec<String>,
    /// Canned payload, serialized to the reply text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
    /// Verbatim reply text; takes precedence over `payload`. Lets scripts
    /// exercise parse failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl ScriptRule {
    pub fn payload(tag: SchemaTag, matches: Vec<String>, payload: serde_json::Value) -> Self {
        Self {
            tag,
            matches,
            payload: Some(payload),
            raw: None,
        }
    }

    pub fn raw(tag: SchemaTag, matches: Vec<String>, raw: impl Into<String>) -> Self {
        Self {
            tag,
            matches,
            payload: None,
            raw: Some(raw.into()),
        }
    }
}

/// Scripted chat backend with per-tag defaults.
#[derive(Debug, Clone, Default)]
pub struct MockChatBackend {
    rules: Vec<ScriptRule>,
}

impl MockChatBackend {
    /// Defaults only; every call falls through to the per-tag default.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_rules(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn from_script_file(path: &Path) -> Result<Self, std::io::Error> {
        let file = std::fs::File::open(path)?;
        let mut rules = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), lineno + 1),
                )
            })?;
            rules.push(rule);
        }
        Ok(Self { rules })
    }

    fn default_payload(tag: SchemaTag) -> serde_json::Value {
        match tag {
            SchemaTag::Plan => serde_json::json!({
                "department": "unknown",
                "queries": ["general clinical overview"],
                "reasoning": "mock default"
            }),
            SchemaTag::Queries => serde_json::json!({ "queries": ["focused follow-up query"] }),
            SchemaTag::Confidence => serde_json::json!({
                "sufficiency": 0.9, "accuracy": 0.9, "rationale": "mock default"
            }),
            SchemaTag::Diagnosis => serde_json::json!({
                "ranked": [
                    {"condition": "condition alpha", "rationale": "mock default"},
                    {"condition": "condition beta", "rationale": "mock default"},
                    {"condition": "condition gamma", "rationale": "mock default"}
                ]
            }),
            SchemaTag::Adoption => {
                serde_json::json!({ "adopt": true, "justification": "mock default" })
            }
            SchemaTag::Medication => serde_json::json!({
                "recommended": [{"drug": "drug alpha", "rationale": "mock default"}]
            }),
            SchemaTag::Judge => serde_json::json!({ "scores": [5] }),
            SchemaTag::Classify => {
                serde_json::json!({ "target": "Both", "rationale": "mock default" })
            }
        }
    }
}

impl ChatBackend for MockChatBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let prompt = request.full_prompt();
        for rule in &self.rules {
            if rule.tag == request.schema_tag && rule.matches.iter().all(|m| prompt.contains(m)) {
                if let Some(raw) = &rule.raw {
                    return Ok(raw.clone());
                }
                if let Some(payload) = &rule.payload {
                    return Ok(payload.to_string());
                }
            }
        }
        Ok(Self::default_payload(request.schema_tag).to_string())
    }
}

/// Hash-to-vector embedder: identical text always maps to the identical unit
/// vector, distinct texts to effectively independent ones.
#[derive(Debug, Clone)]
pub struct MockEmbeddingBackend {
    seed: u64,
    dim: usize,
}

impl MockEmbeddingBackend {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { seed, dim }
    }

    fn vector_for(&self, text: &str) -> Vec<f32> {
        let mut values = Vec::with_capacity(self.dim);
        let mut block: u64 = 0;
        while values.len() < self.dim {
            let mut hasher = Sha256::new();
            hasher.update(self.seed.to_le_bytes());
            hasher.update(block.to_le_bytes());
            hasher.update(text.as_bytes());
            let digest = hasher.finalize();
            for word in digest.chunks_exact(4) {
                if values.len() == self.dim {
                    break;
                }
                let u = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
                // map to [-1, 1]
                values.push((u as f64 / u32::MAX as f64 * 2.0 - 1.0) as f32);
            }
            block += 1;
        }
        values
    }
}

impl EmbeddingBackend for MockEmbeddingBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// One scripted rerank behavior: fires when every query and passage substring
/// matches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RerankRule {
    #[serde(default)]
    pub match_query: Vec<String>,
    #[serde(default)]
    pub match_passage: Vec<String>,
    pub score: f32,
}

/// Deterministic rerank scorer.
#[derive(Debug, Clone)]
pub enum MockRerankBackend {
    /// Jaccard token overlap between query and passage. An exact textual match
    /// scores 1.0, disjoint texts 0.0.
    TokenOverlap,
    /// First matching rule wins; unmatched pairs fall back to token overlap.
    Scripted(Vec<RerankRule>),
    /// Always fails; exercises the degraded fallback path.
    Failing,
}

impl RerankBackend for MockRerankBackend {
    fn score(&self, _instruction: &str, query: &str, passage: &str) -> Result<f32, BackendError> {
        match self {
            MockRerankBackend::TokenOverlap => Ok(token_jaccard(query, passage)),
            MockRerankBackend::Scripted(rules) => {
                for rule in rules {
                    let q_ok = rule.match_query.iter().all(|m| query.contains(m));
                    let p_ok = rule.match_passage.iter().all(|m| passage.contains(m));
                    if q_ok && p_ok {
                        return Ok(rule.score.clamp(0.0, 1.0));
                    }
                }
                Ok(token_jaccard(query, passage))
            }
            MockRerankBackend::Failing => {
                Err(BackendError::Transport("scripted rerank outage".into()))
            }
        }
    }
}

/// One scripted judge behavior, matched against the question text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRule {
    #[serde(default, rename = "match")]
    pub matches: Vec<String>,
    pub relevance: Vec<u8>,
    pub contribution: Vec<u8>,
}

/// Scripted judge. Score lists cycle over the item count so a one-element
/// list scores every document identically.
#[derive(Debug, Clone)]
pub struct MockJudgeBackend {
    rules: Vec<JudgeRule>,
    default_score: u8,
}

impl Default for MockJudgeBackend {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default_score: 5,
        }
    }
}

impl MockJudgeBackend {
    pub fn from_rules(rules: Vec<JudgeRule>) -> Self {
        Self {
            rules,
            default_score: 5,
        }
    }

    pub fn from_script_file(path: &Path) -> Result<Self, std::io::Error> {
        let file = std::fs::File::open(path)?;
        let mut rules = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: JudgeRule = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), lineno + 1),
                )
            })?;
            rules.push(rule);
        }
        Ok(Self {
            rules,
            default_score: 5,
        })
    }
}

impl JudgeBackend for MockJudgeBackend {
    fn judge(
        &self,
        question: &str,
        items: &[&str],
        rubric: JudgeRubric,
        _gold: Option<&str>,
    ) -> Result<Vec<u8>, BackendError> {
        for rule in &self.rules {
            if rule.matches.iter().all(|m| question.contains(m)) {
                let scores = match rubric {
                    JudgeRubric::Relevance => &rule.relevance,
                    JudgeRubric::Contribution => &rule.contribution,
                };
                if scores.is_empty() {
                    break;
                }
                return Ok((0..items.len()).map(|i| scores[i % scores.len()]).collect());
            }
        }
        Ok(vec![self.default_score; items.len()])
    }
}

/// Sanity check helper for scripts: all tags that a full consultation can
/// reach have a default, so an unscripted call never aborts a run.
pub fn reachable_tags() -> BTreeSet<SchemaTag> {
    [
        SchemaTag::Plan,
        SchemaTag::Queries,
        SchemaTag::Confidence,
        SchemaTag::Diagnosis,
        SchemaTag::Adoption,
        SchemaTag::Medication,
        SchemaTag::Judge,
        SchemaTag::Classify,
    ]
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, RetryPolicy, SchemaPayload};

    #[test]
    fn first_matching_rule_wins() {
        let backend = MockChatBackend::from_rules(vec![
            ScriptRule::payload(
                SchemaTag::Queries,
                vec!["alpha".into(), "beta".into()],
                serde_json::json!({"queries": ["both"]}),
            ),
            ScriptRule::payload(
                SchemaTag::Queries,
                vec!["alpha".into()],
                serde_json::json!({"queries": ["alpha only"]}),
            ),
        ]);
        let req = ChatRequest::new(SchemaTag::Queries, "sys", "alpha beta gamma");
        assert!(backend.chat(&req).unwrap().contains("both"));
        let req = ChatRequest::new(SchemaTag::Queries, "sys", "alpha gamma");
        assert!(backend.chat(&req).unwrap().contains("alpha only"));
    }

    #[test]
    fn unmatched_tag_gets_default() {
        let backend = MockChatBackend::empty();
        let req = ChatRequest::new(SchemaTag::Diagnosis, "sys", "whatever");
        let out = complete(&backend, &req, &RetryPolicy::immediate()).unwrap();
        match out.payload {
            SchemaPayload::Diagnosis(d) => assert_eq!(d.ranked.len(), 3),
            other => panic!("wrong payload {other:?}"),
        }
    }

    #[test]
    fn embedder_is_deterministic_and_unit_norm() {
        let b = MockEmbeddingBackend::new(7, 16);
        let v1 = &crate::llm::embed(&b, &["same text"], &RetryPolicy::immediate()).unwrap()[0];
        let v2 = &crate::llm::embed(&b, &["same text"], &RetryPolicy::immediate()).unwrap()[0];
        assert_eq!(v1, v2);
        assert!((v1.norm() - 1.0).abs() < 1e-6);
        let other = &crate::llm::embed(&b, &["different"], &RetryPolicy::immediate()).unwrap()[0];
        assert_ne!(v1, other);
    }

    #[test]
    fn embed_batch_preserves_order_and_arity() {
        let b = MockEmbeddingBackend::new(1, 8);
        let out = crate::llm::embed(&b, &["a", "b", "c"], &RetryPolicy::immediate()).unwrap();
        assert_eq!(out.len(), 3);
        let solo = crate::llm::embed(&b, &["b"], &RetryPolicy::immediate()).unwrap();
        assert_eq!(out[1], solo[0]);
    }

    #[test]
    fn judge_rules_cycle_and_default() {
        let j = MockJudgeBackend::from_rules(vec![JudgeRule {
            matches: vec!["case-1".into()],
            relevance: vec![3, 7, 5],
            contribution: vec![4],
        }]);
        let scores = j
            .judge(
                "about case-1",
                &["d1", "d2", "d3"],
                JudgeRubric::Relevance,
                None,
            )
            .unwrap();
        assert_eq!(scores, vec![3, 7, 5]);
        let scores = j
            .judge(
                "about case-1",
                &["d1", "d2"],
                JudgeRubric::Contribution,
                Some("g"),
            )
            .unwrap();
        assert_eq!(scores, vec![4, 4]);
        let scores = j
            .judge("other", &["d1"], JudgeRubric::Relevance, None)
            .unwrap();
        assert_eq!(scores, vec![5]);
    }
}
