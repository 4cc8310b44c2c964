//! Domain routing: decide which knowledge base(s) a document belongs to.

use serde::{Deserialize, Serialize};

use super::{DomainAssignment, DomainTarget, KbError, SourceDocument};
use crate::llm::{complete, ChatBackend, ChatRequest, RetryPolicy, SchemaPayload, SchemaTag};

/// Keyword lists for the heuristic classifier used when no chat backend is
/// configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon {
    pub diagnostic_terms: Vec<String>,
    pub medication_terms: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            diagnostic_terms: [
                "diagnosis",
                "diagnostic",
                "symptom",
                "pathology",
                "etiology",
                "differential",
                "prognosis",
                "presentation",
                "examination",
                "syndrome",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            medication_terms: [
                "drug",
                "dose",
                "dosage",
                "medication",
                "contraindication",
                "interaction",
                "prescription",
                "precaution",
                "pharmacology",
                "regimen",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

/// Count distinct lexicon terms present per side; more diagnostic hits routes
/// DoctorOnly, more medication hits PharmacistOnly, ties route Both. Terms
/// match whole tokens, so "dose" does not fire inside "dosage".
pub fn classify_with_lexicon(
    doc: &SourceDocument,
    lexicon: &Lexicon,
) -> Result<DomainAssignment, KbError> {
    doc.validate()?;
    let tokens: std::collections::BTreeSet<String> =
        crate::text::tokenize(&format!("{} {}", doc.title, doc.body))
            .into_iter()
            .collect();
    let hits = |terms: &[String]| {
        terms
            .iter()
            .filter(|t| tokens.contains(&t.to_lowercase()))
            .count()
    };
    let diag = hits(&lexicon.diagnostic_terms);
    let med = hits(&lexicon.medication_terms);
    let target = match diag.cmp(&med) {
        std::cmp::Ordering::Greater => DomainTarget::DoctorOnly,
        std::cmp::Ordering::Less => DomainTarget::PharmacistOnly,
        std::cmp::Ordering::Equal => DomainTarget::Both,
    };
    Ok(DomainAssignment {
        target,
        rationale: format!("lexicon hits: diagnostic={diag}, medication={med}"),
    })
}

fn classify_prompt(doc: &SourceDocument) -> ChatRequest {
    ChatRequest::new(
        SchemaTag::Classify,
        "You route reference documents into role-specific knowledge bases. \
         Reply with JSON {\"target\": \"DoctorOnly\"|\"PharmacistOnly\"|\"Both\", \"rationale\": \"...\"}. \
         DoctorOnly is for content purely about disease symptoms, pathology, or diagnosis; \
         PharmacistOnly for content purely about medication guidelines, dosages, or precautions; \
         Both for content covering diagnosis and treatment together.",
        format!("doc_id: {}\ntitle: {}\n\n{}", doc.doc_id, doc.title, doc.body),
    )
}

/// Classify via the chat backend when one is configured, otherwise via the
/// lexicon. A backend failure (after retries and one repair round) is an
/// error carrying the doc id, never a silent fallback.
pub fn classify_document(
    doc: &SourceDocument,
    backend: Option<&dyn ChatBackend>,
    lexicon: &Lexicon,
    retry: &RetryPolicy,
) -> Result<DomainAssignment, KbError> {
    doc.validate()?;
    let Some(backend) = backend else {
        return classify_with_lexicon(doc, lexicon);
    };
    let output = complete(backend, &classify_prompt(doc), retry).map_err(|source| {
        KbError::Classification {
            doc_id: doc.doc_id.clone(),
            source,
        }
    })?;
    match output.payload {
        SchemaPayload::Classify(p) => Ok(DomainAssignment {
            target: p.target,
            rationale: p.rationale,
        }),
        other => Err(KbError::Classification {
            doc_id: doc.doc_id.clone(),
            source: crate::llm::LlmError::SchemaAfterRepair {
                tag: SchemaTag::Classify,
                message: format!("unexpected payload {:?}", other.tag()),
            },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::MockChatBackend;
    use crate::llm::BackendError;

    fn doc(body: &str) -> SourceDocument {
        SourceDocument {
            doc_id: "doc-1".into(),
            title: "note".into(),
            body: body.into(),
            metadata: Default::default(),
        }
    }

    #[test]
    fn medication_only_content_routes_to_pharmacist() {
        let d = doc(
            "Recommended dosage is 10mg daily; precaution: avoid drug interaction with statins.",
        );
        let a = classify_with_lexicon(&d, &Lexicon::default()).unwrap();
        assert_eq!(a.target, DomainTarget::PharmacistOnly);
    }

    #[test]
    fn mixed_content_ties_to_both() {
        let d = doc("Diagnosis requires symptom review; dosage and interaction guidance follows.");
        let a = classify_with_lexicon(&d, &Lexicon::default()).unwrap();
        assert_eq!(a.target, DomainTarget::Both);
    }

    #[test]
    fn empty_body_is_an_error_not_a_classification() {
        let d = doc("");
        assert!(classify_with_lexicon(&d, &Lexicon::default()).is_err());
        assert!(
            classify_document(&d, None, &Lexicon::default(), &RetryPolicy::immediate()).is_err()
        );
    }

    #[test]
    fn scripted_backend_wins_over_lexicon() {
        let backend = MockChatBackend::from_rules(vec![crate::llm::mock::ScriptRule::payload(
            SchemaTag::Classify,
            vec!["doc-1".into()],
            serde_json::json!({"target": "DoctorOnly", "rationale": "scripted"}),
        )]);
        let d = doc("dosage dosage dosage");
        let a = classify_document(
            &d,
            Some(&backend),
            &Lexicon::default(),
            &RetryPolicy::immediate(),
        )
        .unwrap();
        assert_eq!(a.target, DomainTarget::DoctorOnly);
        assert_eq!(a.rationale, "scripted");
    }

    #[test]
    fn backend_failure_carries_doc_id() {
        struct Down;
        impl ChatBackend for Down {
            fn chat(&self, _: &ChatRequest) -> Result<String, BackendError> {
                Err(BackendError::Transport("connection refused".into()))
            }
        }
        let err = classify_document(
            &doc("text"),
            Some(&Down),
            &Lexicon::default(),
            &RetryPolicy {
                max_attempts: 2,
                base_delay_ms: 0,
            },
        )
        .unwrap_err();
        match err {
            KbError::Classification { doc_id, .. } => assert_eq!(doc_id, "doc-1"),
            other => panic!("wrong error: {other}"),
        }
    }
}
