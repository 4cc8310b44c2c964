//! Per-tag structured output schemas and their validation rules.

use serde::{Deserialize, Serialize};

use super::SchemaTag;
use crate::kb::DomainTarget;
use crate::text::normalize_answer;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanPayload {
    pub department: String,
    pub queries: Vec<String>,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueriesPayload {
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidencePayload {
    pub sufficiency: f64,
    pub accuracy: f64,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosisEntry {
    pub condition: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosisPayload {
    pub ranked: Vec<DiagnosisEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdoptionPayload {
    pub adopt: bool,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MedicationEntry {
    pub drug: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MedicationPayload {
    pub recommended: Vec<MedicationEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_option: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgePayload {
    pub scores: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyPayload {
    pub target: DomainTarget,
    #[serde(default)]
    pub rationale: String,
}

/// Union of all validated payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SchemaPayload {
    Plan(PlanPayload),
    Queries(QueriesPayload),
    Confidence(ConfidencePayload),
    Diagnosis(DiagnosisPayload),
    Adoption(AdoptionPayload),
    Medication(MedicationPayload),
    Judge(JudgePayload),
    Classify(ClassifyPayload),
}

impl SchemaPayload {
    pub fn tag(&self) -> SchemaTag {
        match self {
            SchemaPayload::Plan(_) => SchemaTag::Plan,
            SchemaPayload::Queries(_) => SchemaTag::Queries,
            SchemaPayload::Confidence(_) => SchemaTag::Confidence,
            SchemaPayload::Diagnosis(_) => SchemaTag::Diagnosis,
            SchemaPayload::Adoption(_) => SchemaTag::Adoption,
            SchemaPayload::Medication(_) => SchemaTag::Medication,
            SchemaPayload::Judge(_) => SchemaTag::Judge,
            SchemaPayload::Classify(_) => SchemaTag::Classify,
        }
    }
}

/// Pull the first plausible JSON object out of a chat reply. Models often wrap
/// JSON in prose or code fences.
pub(crate) fn extract_json(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') && trimmed.ends_with('}') {
        return Some(trimmed);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    (end > start).then(|| &trimmed[start..=end])
}

fn unit_range(name: &str, v: f64) -> Result<(), String> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(format!("{name} must be in [0,1], got {v}"));
    }
    Ok(())
}

fn distinct_normalized<'a, I: Iterator<Item = &'a str>>(
    items: I,
    what: &str,
) -> Result<(), String> {
    let mut seen = std::collections::BTreeSet::new();
    for item in items {
        if !seen.insert(normalize_answer(item)) {
            return Err(format!("duplicate {what}: {item:?}"));
        }
    }
    Ok(())
}

/// Parse raw chat text into the payload named by `tag` and enforce that tag's
/// schema rules.
pub fn parse_and_validate(tag: SchemaTag, raw: &str) -> Result<SchemaPayload, String> {
    let json = extract_json(raw).ok_or_else(|| "no JSON object in reply".to_string())?;
    let parse_err = |e: serde_json::Error| format!("invalid {} JSON: {e}", tag.as_str());
    match tag {
        SchemaTag::Plan => {
            let p: PlanPayload = serde_json::from_str(json).map_err(parse_err)?;
            if p.queries.is_empty() || p.queries.iter().any(|q| q.trim().is_empty()) {
                return Err("plan must contain at least one non-empty query".into());
            }
            Ok(SchemaPayload::Plan(p))
        }
        SchemaTag::Queries => {
            let p: QueriesPayload = serde_json::from_str(json).map_err(parse_err)?;
            if p.queries.iter().any(|q| q.trim().is_empty()) {
                return Err("queries must be non-empty strings".into());
            }
            Ok(SchemaPayload::Queries(p))
        }
        SchemaTag::Confidence => {
            let p: ConfidencePayload = serde_json::from_str(json).map_err(parse_err)?;
            unit_range("sufficiency", p.sufficiency)?;
            unit_range("accuracy", p.accuracy)?;
            Ok(SchemaPayload::Confidence(p))
        }
        SchemaTag::Diagnosis => {
            let p: DiagnosisPayload = serde_json::from_str(json).map_err(parse_err)?;
            if p.ranked.len() < 3 {
                return Err(format!(
                    "diagnosis requires >=3 ranked candidates, got {}",
                    p.ranked.len()
                ));
            }
            if p.ranked.iter().any(|e| e.condition.trim().is_empty()) {
                return Err("diagnosis conditions must be non-empty".into());
            }
            distinct_normalized(p.ranked.iter().map(|e| e.condition.as_str()), "condition")?;
            Ok(SchemaPayload::Diagnosis(p))
        }
        SchemaTag::Adoption => {
            let p: AdoptionPayload = serde_json::from_str(json).map_err(parse_err)?;
            Ok(SchemaPayload::Adoption(p))
        }
        SchemaTag::Medication => {
            let p: MedicationPayload = serde_json::from_str(json).map_err(parse_err)?;
            if p.recommended.is_empty() {
                return Err("medication plan requires at least one recommendation".into());
            }
            if p.recommended.iter().any(|e| e.drug.trim().is_empty()) {
                return Err("drug names must be non-empty".into());
            }
            distinct_normalized(p.recommended.iter().map(|e| e.drug.as_str()), "drug")?;
            if let Some(letter) = &p.selected_option {
                if letter.trim().is_empty() {
                    return Err("selected_option must be a non-empty option letter".into());
                }
            }
            Ok(SchemaPayload::Medication(p))
        }
        SchemaTag::Judge => {
            let p: JudgePayload = serde_json::from_str(json).map_err(parse_err)?;
            if let Some(&bad) = p.scores.iter().find(|&&s| s > 10) {
                return Err(format!("judge score {bad} out of range 0..=10"));
            }
            Ok(SchemaPayload::Judge(p))
        }
        SchemaTag::Classify => {
            let p: ClassifyPayload = serde_json::from_str(json).map_err(parse_err)?;
            Ok(SchemaPayload::Classify(p))
        }
    }
}
