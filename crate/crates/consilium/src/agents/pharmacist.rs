//! Pharmacist agent: adoption review of the doctor's diagnosis, therapy
//! query planning, and the committed medication recommendation.
//!
//! Information flow rule: when the pharmacist declines to adopt the
//! diagnosis, the diagnosis text is withheld from every later pharmacist
//! prompt and therapy planning restarts from the complaint alone.

use super::{
    AdoptionDecision, AgentContext, AgentError, Diagnosis, MedicationPlan, PromptRecord,
    RecommendedDrug,
};
use crate::dataset::{match_option, option_letter, PatientCase};
use crate::llm::{complete, ChatRequest, SchemaPayload, SchemaTag};
use crate::retrieval::RetrievedDoc;

fn unexpected(stage: &'static str, tag: SchemaTag, got: SchemaTag) -> AgentError {
    AgentError::Llm {
        stage,
        source: crate::llm::LlmError::SchemaAfterRepair {
            tag,
            message: format!("unexpected payload {got:?}"),
        },
    }
}

fn render_diagnosis(diagnosis: &Diagnosis) -> String {
    diagnosis
        .ranked
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {} ({})", i + 1, c.condition, c.rationale))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Review the doctor's differential and decide whether to build therapy on it.
pub fn decide_adoption(
    ctx: &AgentContext,
    case: &PatientCase,
    diagnosis: &Diagnosis,
    prompts: &mut Vec<PromptRecord>,
) -> Result<AdoptionDecision, AgentError> {
    let system = "You are the clinical pharmacist reviewing the physician's differential \
                  before planning therapy. Adopt it if the ranking is clinically plausible \
                  for the complaint; reject it if it is not. Reply with JSON {\"adopt\": \
                  true|false, \"justification\": \"...\"}.";
    let user = format!(
        "Role: pharmacist\nPatient complaint: {}\nPhysician differential:\n{}",
        case.complaint,
        render_diagnosis(diagnosis),
    );
    let request = ChatRequest::new(SchemaTag::Adoption, system, user);
    prompts.push(PromptRecord {
        tag: SchemaTag::Adoption,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });
    let output = complete(ctx.chat, &request, &ctx.retry).map_err(|source| AgentError::Llm {
        stage: "adoption",
        source,
    })?;
    match output.payload {
        SchemaPayload::Adoption(p) => Ok(AdoptionDecision {
            adopt: p.adopt,
            justification: p.justification,
        }),
        other => Err(unexpected("adoption", SchemaTag::Adoption, other.tag())),
    }
}

/// The question string the pharmacist retrieves and reflects against. The
/// working diagnosis appears only when it was adopted.
pub fn therapy_question(case: &PatientCase, adopted: Option<&Diagnosis>) -> String {
    match adopted {
        Some(d) => format!("{} (working diagnosis: {})", case.complaint, d.primary()),
        None => case.complaint.clone(),
    }
}

/// Plan the initial therapy queries.
pub fn plan_queries(
    ctx: &AgentContext,
    case: &PatientCase,
    adopted: Option<&Diagnosis>,
    prompts: &mut Vec<PromptRecord>,
) -> Result<Vec<String>, AgentError> {
    let system = "You are the clinical pharmacist. Plan retrieval queries over a medication \
                  knowledge base covering candidate drugs, indications, contraindications, \
                  and interactions for this case. Reply with JSON {\"queries\": [\"...\"]}.";
    let context_line = match adopted {
        Some(d) => format!("Working diagnosis: {}", d.primary()),
        None => "No adopted diagnosis; plan from the complaint alone.".to_string(),
    };
    let user = format!(
        "Role: pharmacist\nRetrieval round 0\nPatient complaint: {}\n{}\nPropose up to {} queries.",
        case.complaint, context_line, ctx.reflection.q_max,
    );
    let request = ChatRequest::new(SchemaTag::Queries, system, user);
    prompts.push(PromptRecord {
        tag: SchemaTag::Queries,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });
    let output = complete(ctx.chat, &request, &ctx.retry).map_err(|source| AgentError::Llm {
        stage: "therapy planning",
        source,
    })?;
    match output.payload {
        SchemaPayload::Queries(p) => {
            let mut queries = p.queries;
            if queries.is_empty() {
                // an empty therapy plan would skip retrieval entirely; fall
                // back to the complaint as the one query
                queries.push(case.complaint.clone());
            }
            if queries.len() > ctx.reflection.q_max {
                queries.truncate(ctx.reflection.q_max);
            }
            Ok(queries)
        }
        other => Err(unexpected(
            "therapy planning",
            SchemaTag::Queries,
            other.tag(),
        )),
    }
}

fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {o}", option_letter(i)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn recommend_request(
    case: &PatientCase,
    adopted: Option<&Diagnosis>,
    evidence: &[RetrievedDoc],
) -> ChatRequest {
    let system = "You are the clinical pharmacist. Recommend medication for the case based on \
                  the evidence. Reply with JSON {\"recommended\": [{\"drug\": \"...\", \
                  \"rationale\": \"...\"}], \"selected_option\": \"A\"} where \
                  selected_option appears only when answer options are given.";
    let diagnosis_line = match adopted {
        Some(d) => format!("Working diagnosis: {}", d.primary()),
        None => {
            "No adopted diagnosis; recommend from the complaint and evidence alone.".to_string()
        }
    };
    let mut user = format!(
        "Role: pharmacist\nPatient complaint: {}\n{diagnosis_line}\nEvidence:\n{}",
        case.complaint,
        if evidence.is_empty() {
            "(none)".to_string()
        } else {
            evidence
                .iter()
                .map(|d| format!("[{}] {}", d.rank, d.text))
                .collect::<Vec<_>>()
                .join("\n")
        },
    );
    if let Some(options) = &case.medication_options {
        user.push_str(&format!(
            "\nAnswer options:\n{}\nSet selected_option to the letter of your choice.",
            render_options(options)
        ));
    }
    ChatRequest::new(SchemaTag::Medication, system, user)
}

/// Resolve the plan's answer against the option list: an explicit
/// selected_option wins, otherwise the first recommended drug is matched by
/// text. Returns the canonical letter.
fn resolve_option(plan: &MedicationPlan, options: &[String]) -> Option<char> {
    if let Some(selected) = &plan.selected_option {
        return match_option(options, selected).map(option_letter);
    }
    plan.recommended
        .first()
        .and_then(|r| match_option(options, &r.drug))
        .map(option_letter)
}

/// Commit to the medication. For multiple-choice cases the answer must
/// resolve to an option; one corrective re-prompt restates the options.
pub fn recommend(
    ctx: &AgentContext,
    case: &PatientCase,
    adopted: Option<&Diagnosis>,
    evidence: &[RetrievedDoc],
    prompts: &mut Vec<PromptRecord>,
) -> Result<MedicationPlan, AgentError> {
    let request = recommend_request(case, adopted, evidence);
    prompts.push(PromptRecord {
        tag: SchemaTag::Medication,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });

    let mut attempt = 0;
    let mut current = request;
    loop {
        let output =
            complete(ctx.chat, &current, &ctx.retry).map_err(|source| AgentError::Llm {
                stage: "medication",
                source,
            })?;
        let p = match output.payload {
            SchemaPayload::Medication(p) => p,
            other => return Err(unexpected("medication", SchemaTag::Medication, other.tag())),
        };
        let mut plan = MedicationPlan {
            recommended: p
                .recommended
                .into_iter()
                .map(|e| RecommendedDrug {
                    drug: e.drug,
                    rationale: e.rationale,
                })
                .collect(),
            selected_option: p.selected_option,
        };

        match &case.medication_options {
            None => {
                plan.selected_option = None;
                return Ok(plan);
            }
            Some(options) => match resolve_option(&plan, options) {
                Some(letter) => {
                    plan.selected_option = Some(letter.to_string());
                    return Ok(plan);
                }
                None if attempt == 0 => {
                    attempt = 1;
                    let answer = plan
                        .selected_option
                        .clone()
                        .or_else(|| plan.recommended.first().map(|r| r.drug.clone()))
                        .unwrap_or_default();
                    current = ChatRequest::new(
                        SchemaTag::Medication,
                        current.system_prompt.clone(),
                        format!(
                            "{}\n\nYour answer {answer:?} does not resolve to an option. \
                             Choose from:\n{}",
                            current.user_prompt,
                            render_options(options)
                        ),
                    );
                    prompts.push(PromptRecord {
                        tag: SchemaTag::Medication,
                        system: current.system_prompt.clone(),
                        user: current.user_prompt.clone(),
                    });
                }
                None => {
                    let answer = plan
                        .selected_option
                        .clone()
                        .or_else(|| plan.recommended.first().map(|r| r.drug.clone()))
                        .unwrap_or_default();
                    return Err(AgentError::OptionViolation {
                        stage: "medication",
                        answer,
                    });
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{RankedCondition, ReflectionConfig};
    use crate::kb::{IndexPair, VectorIndex};
    use crate::llm::mock::{MockChatBackend, MockEmbeddingBackend, MockRerankBackend, ScriptRule};
    use crate::llm::RetryPolicy;
    use crate::retrieval::RetrievalParams;
    use crate::types::Role;

    fn case() -> PatientCase {
        PatientCase {
            case_id: "case-1".into(),
            complaint: "persistent cough and high fever".into(),
            gold_diagnosis: "Influenza".into(),
            gold_medication: "Oseltamivir".into(),
            diagnosis_options: None,
            medication_options: Some(vec![
                "Amoxicillin".into(),
                "Oseltamivir".into(),
                "Salbutamol".into(),
                "Ibuprofen".into(),
            ]),
            department: None,
        }
    }

    fn diagnosis() -> Diagnosis {
        Diagnosis {
            ranked: vec![
                RankedCondition {
                    condition: "Influenza".into(),
                    rationale: "fits".into(),
                },
                RankedCondition {
                    condition: "Pneumonia".into(),
                    rationale: "possible".into(),
                },
                RankedCondition {
                    condition: "Common cold".into(),
                    rationale: "mild".into(),
                },
            ],
        }
    }

    struct Deps {
        chat: MockChatBackend,
        embedder: MockEmbeddingBackend,
        reranker: MockRerankBackend,
        indexes: IndexPair,
    }

    impl Deps {
        fn new(rules: Vec<ScriptRule>) -> Self {
            Self {
                chat: MockChatBackend::from_rules(rules),
                embedder: MockEmbeddingBackend::new(1, 16),
                reranker: MockRerankBackend::TokenOverlap,
                indexes: IndexPair {
                    doctor: VectorIndex::new(Role::Doctor, 16),
                    pharmacist: VectorIndex::new(Role::Pharmacist, 16),
                },
            }
        }

        fn ctx(&self) -> AgentContext<'_> {
            AgentContext {
                chat: &self.chat,
                embedder: &self.embedder,
                reranker: &self.reranker,
                indexes: &self.indexes,
                retrieval: RetrievalParams::default(),
                reflection: ReflectionConfig::default(),
                departments: &[],
                retry: RetryPolicy::immediate(),
            }
        }
    }

    #[test]
    fn adoption_decision_parses_both_ways() {
        for (adopt, justification) in [(true, "sound"), (false, "ranking contradicts complaint")] {
            let deps = Deps::new(vec![ScriptRule::payload(
                SchemaTag::Adoption,
                vec![],
                serde_json::json!({"adopt": adopt, "justification": justification}),
            )]);
            let ctx = deps.ctx();
            let d = decide_adoption(&ctx, &case(), &diagnosis(), &mut Vec::new()).unwrap();
            assert_eq!(d.adopt, adopt);
        }
    }

    #[test]
    fn adoption_prompt_shows_the_differential() {
        let deps = Deps::new(vec![]);
        let ctx = deps.ctx();
        let mut prompts = Vec::new();
        decide_adoption(&ctx, &case(), &diagnosis(), &mut prompts).unwrap();
        assert!(prompts[0].user.contains("Influenza"));
        assert!(prompts[0].user.contains("Role: pharmacist"));
    }

    #[test]
    fn therapy_queries_mention_diagnosis_only_when_adopted() {
        let deps = Deps::new(vec![]);
        let ctx = deps.ctx();
        let d = diagnosis();

        let mut prompts = Vec::new();
        plan_queries(&ctx, &case(), Some(&d), &mut prompts).unwrap();
        assert!(prompts[0].user.contains("Working diagnosis: Influenza"));

        let mut prompts = Vec::new();
        plan_queries(&ctx, &case(), None, &mut prompts).unwrap();
        assert!(!prompts[0].user.contains("Influenza"));
        assert!(prompts[0].user.contains("complaint alone"));
    }

    #[test]
    fn empty_therapy_plan_falls_back_to_complaint() {
        let deps = Deps::new(vec![ScriptRule::payload(
            SchemaTag::Queries,
            vec![],
            serde_json::json!({"queries": []}),
        )]);
        let ctx = deps.ctx();
        let queries = plan_queries(&ctx, &case(), None, &mut Vec::new()).unwrap();
        assert_eq!(queries, vec![case().complaint]);
    }

    #[test]
    fn recommend_resolves_selected_option_to_letter() {
        let deps = Deps::new(vec![ScriptRule::payload(
            SchemaTag::Medication,
            vec![],
            serde_json::json!({
                "recommended": [{"drug": "Oseltamivir", "rationale": "antiviral"}],
                "selected_option": "b"
            }),
        )]);
        let ctx = deps.ctx();
        let plan = recommend(&ctx, &case(), Some(&diagnosis()), &[], &mut Vec::new()).unwrap();
        assert_eq!(plan.selected_option.as_deref(), Some("B"));
    }

    #[test]
    fn recommend_falls_back_to_drug_text_match() {
        let deps = Deps::new(vec![ScriptRule::payload(
            SchemaTag::Medication,
            vec![],
            serde_json::json!({
                "recommended": [{"drug": "oseltamivir", "rationale": "antiviral"}]
            }),
        )]);
        let ctx = deps.ctx();
        let plan = recommend(&ctx, &case(), Some(&diagnosis()), &[], &mut Vec::new()).unwrap();
        assert_eq!(plan.selected_option.as_deref(), Some("B"));
    }

    #[test]
    fn recommend_repairs_unresolvable_answer_once() {
        let deps = Deps::new(vec![
            ScriptRule::payload(
                SchemaTag::Medication,
                vec!["does not resolve to an option".into()],
                serde_json::json!({
                    "recommended": [{"drug": "Oseltamivir", "rationale": "corrected"}],
                    "selected_option": "B"
                }),
            ),
            ScriptRule::payload(
                SchemaTag::Medication,
                vec![],
                serde_json::json!({
                    "recommended": [{"drug": "Quinine", "rationale": "wrong"}]
                }),
            ),
        ]);
        let ctx = deps.ctx();
        let mut prompts = Vec::new();
        let plan = recommend(&ctx, &case(), None, &[], &mut prompts).unwrap();
        assert_eq!(plan.selected_option.as_deref(), Some("B"));
        assert_eq!(prompts.len(), 2);
    }

    #[test]
    fn recommend_fails_after_second_violation() {
        let deps = Deps::new(vec![ScriptRule::payload(
            SchemaTag::Medication,
            vec![],
            serde_json::json!({"recommended": [{"drug": "Quinine", "rationale": "wrong"}]}),
        )]);
        let ctx = deps.ctx();
        let err = recommend(&ctx, &case(), None, &[], &mut Vec::new()).unwrap_err();
        assert!(matches!(
            err,
            AgentError::OptionViolation {
                stage: "medication",
                ..
            }
        ));
    }

    #[test]
    fn free_text_case_clears_selected_option() {
        let mut free_case = case();
        free_case.medication_options = None;
        let deps = Deps::new(vec![ScriptRule::payload(
            SchemaTag::Medication,
            vec![],
            serde_json::json!({
                "recommended": [{"drug": "Oseltamivir", "rationale": "antiviral"}],
                "selected_option": "B"
            }),
        )]);
        let ctx = deps.ctx();
        let plan = recommend(&ctx, &free_case, None, &[], &mut Vec::new()).unwrap();
        assert!(plan.selected_option.is_none());
        assert_eq!(plan.recommended[0].drug, "Oseltamivir");
    }

    #[test]
    fn recommend_prompt_withholds_unadopted_diagnosis() {
        let deps = Deps::new(vec![]);
        let ctx = deps.ctx();
        let mut prompts = Vec::new();
        let _ = recommend(&ctx, &case(), None, &[], &mut prompts);
        assert!(!prompts[0].user.contains("Influenza"));
        assert!(prompts[0].user.contains("No adopted diagnosis"));
    }
}
