//! The two-agent consultation: a doctor agent that plans, retrieves with
//! confidence-gated reflection, and diagnoses; and a pharmacist agent that
//! reviews the diagnosis, retrieves therapy evidence the same way, and
//! recommends medication.
//!
//! Prompts carry two stable, machine-matchable lines so scripted backends can
//! key behavior per call site: `Role: <role>` and `Retrieval round <r>`.

mod consultation;
mod doctor;
mod pharmacist;
mod reflection;

pub use consultation::{
    run_consultation, AgentMode, ConsultationRecord, ConsultationStatus, DoctorTrace, ModeFlags,
    PharmacistTrace,
};
pub use doctor::{diagnose, plan as doctor_plan};
pub use pharmacist::{decide_adoption, plan_queries as pharmacist_plan_queries, recommend};
pub use reflection::{
    assess_confidence, merge_round, naive_retrieval, run_retrieval_with_reflection,
    ReflectionOutcome,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::IndexPair;
use crate::llm::{ChatBackend, EmbeddingBackend, LlmError, RerankBackend, RetryPolicy, SchemaTag};
use crate::retrieval::{RetrievalError, RetrievalParams, RetrievalResult, RetrievedDoc};

/// Reflection loop budget. `tau` is the confidence threshold that ends the
/// loop, `r_max` the number of reflection rounds after the initial one, and
/// `q_max` the per-round query cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionConfig {
    pub tau: f32,
    pub r_max: u32,
    pub q_max: usize,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            r_max: 2,
            q_max: 4,
        }
    }
}

impl ReflectionConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.tau) || !self.tau.is_finite() {
            return Err(AgentError::BadConfig(format!(
                "tau {} outside [0, 1]",
                self.tau
            )));
        }
        if self.q_max == 0 {
            return Err(AgentError::BadConfig("q_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything an agent needs to act, borrowed for the duration of one case.
pub struct AgentContext<'a> {
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a dyn EmbeddingBackend,
    pub reranker: &'a dyn RerankBackend,
    pub indexes: &'a IndexPair,
    pub retrieval: RetrievalParams,
    pub reflection: ReflectionConfig,
    pub departments: &'a [String],
    pub retry: RetryPolicy,
}

/// Doctor's opening move: department routing plus initial queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticPlan {
    pub department: String,
    pub queries: Vec<String>,
    pub reasoning: String,
}

/// Self-assessment of one round's evidence. `overall` is always the minimum
/// of the two axes, recomputed locally rather than trusted from the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub sufficiency: f32,
    pub accuracy: f32,
    pub overall: f32,
    pub rationale: String,
}

impl ConfidenceReport {
    pub fn new(sufficiency: f32, accuracy: f32, rationale: String) -> Self {
        Self {
            sufficiency,
            accuracy,
            overall: sufficiency.min(accuracy),
            rationale,
        }
    }
}

/// One reflection round: the queries issued, per-query results, the merged
/// evidence, and the confidence assessment (absent in naive mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRound {
    pub round: u32,
    pub queries: Vec<String>,
    pub results: Vec<RetrievalResult>,
    pub merged: Vec<RetrievedDoc>,
    pub confidence: Option<ConfidenceReport>,
}

/// One ranked differential entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCondition {
    pub condition: String,
    pub rationale: String,
}

/// The doctor's committed answer: at least three distinct conditions, most
/// likely first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub ranked: Vec<RankedCondition>,
}

impl Diagnosis {
    pub fn primary(&self) -> &str {
        &self.ranked[0].condition
    }
}

/// Pharmacist's verdict on the doctor's diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptionDecision {
    pub adopt: bool,
    pub justification: String,
}

/// One recommended drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedDrug {
    pub drug: String,
    pub rationale: String,
}

/// The pharmacist's committed answer. For multiple-choice cases
/// `selected_option` is the chosen letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicationPlan {
    pub recommended: Vec<RecommendedDrug>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_option: Option<String>,
}

/// A prompt as issued, kept in the trace so tests can assert what each agent
/// was actually told.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub tag: SchemaTag,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("bad agent config: {0}")]
    BadConfig(String),
    #[error("{stage}: {source}")]
    Llm {
        stage: &'static str,
        #[source]
        source: LlmError,
    },
    #[error("{stage}: {source}")]
    Retrieval {
        stage: &'static str,
        #[source]
        source: RetrievalError,
    },
    #[error("{stage}: answer {answer:?} is not among the provided options")]
    OptionViolation { stage: &'static str, answer: String },
}

impl AgentError {
    /// Pipeline stage name, recorded on failed consultations.
    pub fn stage(&self) -> &'static str {
        match self {
            AgentError::BadConfig(_) => "config",
            AgentError::Llm { stage, .. } => stage,
            AgentError::Retrieval { stage, .. } => stage,
            AgentError::OptionViolation { stage, .. } => stage,
        }
    }
}
