//! One case end to end: doctor plans, retrieves, diagnoses; pharmacist
//! reviews, retrieves, recommends. Failures do not abort a batch; they are
//! recorded on the case with the stage that failed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    decide_adoption, diagnose, doctor_plan, naive_retrieval, pharmacist::therapy_question,
    pharmacist_plan_queries, recommend, run_retrieval_with_reflection, AdoptionDecision,
    AgentContext, AgentError, Diagnosis, DiagnosticPlan, MedicationPlan, PromptRecord,
    ReflectionConfig, ReflectionRound,
};
use crate::dataset::PatientCase;
use crate::retrieval::{RetrievalParams, RetrievedDoc};
use crate::types::Role;

/// How an agent retrieves: the full confidence-gated loop, or a single
/// fixed-query round (the ablation baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    Reflective,
    Naive,
}

/// Per-agent mode switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    pub doctor: AgentMode,
    pub pharmacist: AgentMode,
}

impl ModeFlags {
    pub fn full() -> Self {
        Self {
            doctor: AgentMode::Reflective,
            pharmacist: AgentMode::Reflective,
        }
    }

    pub fn naive() -> Self {
        Self {
            doctor: AgentMode::Naive,
            pharmacist: AgentMode::Naive,
        }
    }

    /// Stable label used in report tables and file names.
    pub fn label(&self) -> String {
        let name = |m: AgentMode| match m {
            AgentMode::Reflective => "reflective",
            AgentMode::Naive => "naive",
        };
        format!(
            "doctor-{}_pharmacist-{}",
            name(self.doctor),
            name(self.pharmacist)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConsultationStatus {
    Completed,
    Failed { stage: String, error: String },
}

/// Everything the doctor did on one case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoctorTrace {
    pub plan: Option<DiagnosticPlan>,
    pub rounds: Vec<ReflectionRound>,
    pub evidence: Vec<RetrievedDoc>,
    pub diagnosis: Option<Diagnosis>,
    pub prompts: Vec<PromptRecord>,
}

/// Everything the pharmacist did on one case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PharmacistTrace {
    pub adoption: Option<AdoptionDecision>,
    pub rounds: Vec<ReflectionRound>,
    pub evidence: Vec<RetrievedDoc>,
    pub medication: Option<MedicationPlan>,
    pub prompts: Vec<PromptRecord>,
}

/// Full per-case trace plus the config it ran under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultationRecord {
    pub case_id: String,
    pub modes: ModeFlags,
    pub doctor: DoctorTrace,
    pub pharmacist: PharmacistTrace,
    pub status: ConsultationStatus,
    pub retrieval: RetrievalParams,
    pub reflection: ReflectionConfig,
    /// Wall-clock time; excluded from aggregate reports so they stay
    /// byte-reproducible.
    pub elapsed_ms: u64,
}

fn drive(
    ctx: &AgentContext,
    case: &PatientCase,
    modes: &ModeFlags,
    doctor: &mut DoctorTrace,
    pharmacist: &mut PharmacistTrace,
) -> Result<(), AgentError> {
    // doctor phase
    match modes.doctor {
        AgentMode::Reflective => {
            let plan = doctor_plan(ctx, case, &mut doctor.prompts)?;
            let outcome = run_retrieval_with_reflection(
                ctx,
                Role::Doctor,
                &case.complaint,
                &plan.queries,
                "doctor retrieval",
                &mut doctor.prompts,
            )?;
            doctor.plan = Some(plan);
            doctor.rounds = outcome.rounds;
            doctor.evidence = outcome.evidence;
        }
        AgentMode::Naive => {
            let outcome = naive_retrieval(ctx, Role::Doctor, &case.complaint, "doctor retrieval")?;
            doctor.rounds = outcome.rounds;
            doctor.evidence = outcome.evidence;
        }
    }
    let department = doctor
        .plan
        .as_ref()
        .map(|p| p.department.clone())
        .unwrap_or_else(|| "unknown".into());
    let diagnosis = diagnose(
        ctx,
        case,
        &department,
        &doctor.evidence,
        &mut doctor.prompts,
    )?;
    doctor.diagnosis = Some(diagnosis.clone());

    // pharmacist phase
    match modes.pharmacist {
        AgentMode::Reflective => {
            let adoption = decide_adoption(ctx, case, &diagnosis, &mut pharmacist.prompts)?;
            let adopted = adoption.adopt.then_some(&diagnosis);
            pharmacist.adoption = Some(adoption.clone());
            let queries = pharmacist_plan_queries(ctx, case, adopted, &mut pharmacist.prompts)?;
            let question = therapy_question(case, adopted);
            let outcome = run_retrieval_with_reflection(
                ctx,
                Role::Pharmacist,
                &question,
                &queries,
                "pharmacist retrieval",
                &mut pharmacist.prompts,
            )?;
            pharmacist.rounds = outcome.rounds;
            pharmacist.evidence = outcome.evidence;
            let medication = recommend(
                ctx,
                case,
                adopted,
                &pharmacist.evidence.clone(),
                &mut pharmacist.prompts,
            )?;
            pharmacist.medication = Some(medication);
        }
        AgentMode::Naive => {
            // no adoption review, but the diagnosis handoff itself stays
            let outcome = naive_retrieval(
                ctx,
                Role::Pharmacist,
                &case.complaint,
                "pharmacist retrieval",
            )?;
            pharmacist.rounds = outcome.rounds;
            pharmacist.evidence = outcome.evidence;
            let medication = recommend(
                ctx,
                case,
                Some(&diagnosis),
                &pharmacist.evidence.clone(),
                &mut pharmacist.prompts,
            )?;
            pharmacist.medication = Some(medication);
        }
    }
    Ok(())
}

/// Run one case under the given modes. Never panics on agent failure; the
/// record's status says what broke and where.
pub fn run_consultation(
    ctx: &AgentContext,
    case: &PatientCase,
    modes: &ModeFlags,
) -> ConsultationRecord {
    let started = Instant::now();
    let mut doctor = DoctorTrace::default();
    let mut pharmacist = PharmacistTrace::default();
    let status = match drive(ctx, case, modes, &mut doctor, &mut pharmacist) {
        Ok(()) => ConsultationStatus::Completed,
        Err(err) => {
            log::warn!("case {} failed at {}: {err}", case.case_id, err.stage());
            ConsultationStatus::Failed {
                stage: err.stage().to_string(),
                error: err.to_string(),
            }
        }
    };
    ConsultationRecord {
        case_id: case.case_id.clone(),
        modes: *modes,
        doctor,
        pharmacist,
        status,
        retrieval: ctx.retrieval,
        reflection: ctx.reflection,
        elapsed_ms: started.elapsed().as_millis() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Chunk, IndexPair, VectorIndex};
    use crate::llm::mock::{MockChatBackend, MockEmbeddingBackend, MockRerankBackend, ScriptRule};
    use crate::llm::{embed, RetryPolicy, SchemaTag};

    // planted docs share no tokens with the complaint, so only the scripted
    // plan queries (which quote them verbatim) can surface them
    const DIAG_DOC: &str =
        "diag0001marker influenza abrupt onset fever myalgia diagnostic criteria";
    const MED_DOC: &str = "med0001marker oseltamivir indication dosing interaction guidance";

    fn case() -> PatientCase {
        PatientCase {
            case_id: "case-0001".into(),
            complaint: "case0001marker sudden high temperature with hacking dry cough".into(),
            gold_diagnosis: "Influenza".into(),
            gold_medication: "Oseltamivir".into(),
            diagnosis_options: Some(vec![
                "Common cold".into(),
                "Influenza".into(),
                "Pneumonia".into(),
                "Asthma".into(),
            ]),
            medication_options: Some(vec![
                "Amoxicillin".into(),
                "Oseltamivir".into(),
                "Salbutamol".into(),
                "Ibuprofen".into(),
            ]),
            department: Some("respiratory".into()),
        }
    }

    /// Scripts mirror the synthetic fixture: answers are keyed on the case
    /// marker plus the planted evidence marker, with a wrong fallback keyed
    /// on the case marker alone.
    fn scripted_rules() -> Vec<ScriptRule> {
        vec![
            ScriptRule::payload(
                SchemaTag::Plan,
                vec!["case0001marker".into()],
                serde_json::json!({
                    "department": "respiratory",
                    "queries": [DIAG_DOC],
                    "reasoning": "scripted"
                }),
            ),
            ScriptRule::payload(
                SchemaTag::Queries,
                vec!["Role: pharmacist".into(), "case0001marker".into()],
                serde_json::json!({ "queries": [MED_DOC] }),
            ),
            ScriptRule::payload(
                SchemaTag::Diagnosis,
                vec!["case0001marker".into(), "diag0001marker".into()],
                serde_json::json!({"ranked": [
                    {"condition": "Influenza", "rationale": "evidence"},
                    {"condition": "Pneumonia", "rationale": "less likely"},
                    {"condition": "Common cold", "rationale": "less likely"}
                ]}),
            ),
            ScriptRule::payload(
                SchemaTag::Diagnosis,
                vec!["case0001marker".into()],
                serde_json::json!({"ranked": [
                    {"condition": "Common cold", "rationale": "guess"},
                    {"condition": "Pneumonia", "rationale": "guess"},
                    {"condition": "Asthma", "rationale": "guess"}
                ]}),
            ),
            ScriptRule::payload(
                SchemaTag::Medication,
                vec!["case0001marker".into(), "med0001marker".into()],
                serde_json::json!({
                    "recommended": [{"drug": "Oseltamivir", "rationale": "evidence"}],
                    "selected_option": "B"
                }),
            ),
            ScriptRule::payload(
                SchemaTag::Medication,
                vec!["case0001marker".into()],
                serde_json::json!({
                    "recommended": [{"drug": "Ibuprofen", "rationale": "guess"}],
                    "selected_option": "D"
                }),
            ),
        ]
    }

    struct World {
        chat: MockChatBackend,
        embedder: MockEmbeddingBackend,
        reranker: MockRerankBackend,
        indexes: IndexPair,
    }

    impl World {
        fn new(rules: Vec<ScriptRule>) -> Self {
            let embedder = MockEmbeddingBackend::new(42, 32);
            let retry = RetryPolicy::immediate();
            let mut doctor = VectorIndex::new(Role::Doctor, 32);
            let mut pharmacist = VectorIndex::new(Role::Pharmacist, 32);
            // planted evidence plus filler so naive complaint queries hit
            // something marker-free
            let doctor_texts = [
                DIAG_DOC,
                "general advice rest fluids temperature monitoring",
            ];
            let pharm_texts = [MED_DOC, "general advice antipyretic temperature care plan"];
            for (i, text) in doctor_texts.iter().enumerate() {
                let v = embed(&embedder, &[*text], &retry).unwrap().remove(0);
                doctor
                    .insert(
                        Chunk {
                            chunk_id: format!("d{i}#0000"),
                            doc_id: format!("d{i}"),
                            text: text.to_string(),
                            start: 0,
                            end: text.chars().count(),
                        },
                        v,
                    )
                    .unwrap();
            }
            for (i, text) in pharm_texts.iter().enumerate() {
                let v = embed(&embedder, &[*text], &retry).unwrap().remove(0);
                pharmacist
                    .insert(
                        Chunk {
                            chunk_id: format!("p{i}#0000"),
                            doc_id: format!("p{i}"),
                            text: text.to_string(),
                            start: 0,
                            end: text.chars().count(),
                        },
                        v,
                    )
                    .unwrap();
            }
            Self {
                chat: MockChatBackend::from_rules(rules),
                embedder,
                reranker: MockRerankBackend::TokenOverlap,
                indexes: IndexPair { doctor, pharmacist },
            }
        }

        fn ctx(&self) -> AgentContext<'_> {
            AgentContext {
                chat: &self.chat,
                embedder: &self.embedder,
                reranker: &self.reranker,
                indexes: &self.indexes,
                retrieval: RetrievalParams { top_k: 2, top_n: 1 },
                reflection: ReflectionConfig::default(),
                departments: &[],
                retry: RetryPolicy::immediate(),
            }
        }
    }

    #[test]
    fn full_mode_reaches_both_gold_answers() {
        let world = World::new(scripted_rules());
        let ctx = world.ctx();
        let record = run_consultation(&ctx, &case(), &ModeFlags::full());
        assert_eq!(record.status, ConsultationStatus::Completed);
        assert_eq!(
            record.doctor.diagnosis.as_ref().unwrap().primary(),
            "Influenza"
        );
        assert_eq!(
            record
                .pharmacist
                .medication
                .as_ref()
                .unwrap()
                .selected_option
                .as_deref(),
            Some("B")
        );
        assert!(record.pharmacist.adoption.as_ref().unwrap().adopt);
        // planted evidence reached rank 1 for both agents
        assert_eq!(record.doctor.evidence[0].text, DIAG_DOC);
        assert_eq!(record.pharmacist.evidence[0].text, MED_DOC);
    }

    #[test]
    fn naive_mode_misses_planted_evidence_and_answers_wrong() {
        let world = World::new(scripted_rules());
        let ctx = world.ctx();
        let record = run_consultation(&ctx, &case(), &ModeFlags::naive());
        assert_eq!(record.status, ConsultationStatus::Completed);
        assert!(record.doctor.plan.is_none(), "naive doctor does not plan");
        assert!(
            record.pharmacist.adoption.is_none(),
            "naive pharmacist skips adoption"
        );
        assert_eq!(record.doctor.rounds.len(), 1);
        assert!(record.doctor.rounds[0].confidence.is_none());
        // the complaint query retrieves only filler, so the fallback rules fire
        assert_ne!(
            record.doctor.diagnosis.as_ref().unwrap().primary(),
            "Influenza"
        );
        assert_ne!(
            record
                .pharmacist
                .medication
                .as_ref()
                .unwrap()
                .selected_option
                .as_deref(),
            Some("B")
        );
    }

    #[test]
    fn mixed_mode_doctor_naive_pharmacist_reflective() {
        let world = World::new(scripted_rules());
        let ctx = world.ctx();
        let modes = ModeFlags {
            doctor: AgentMode::Naive,
            pharmacist: AgentMode::Reflective,
        };
        let record = run_consultation(&ctx, &case(), &modes);
        assert_eq!(record.status, ConsultationStatus::Completed);
        // doctor misses, pharmacist still finds the planted therapy evidence
        assert_ne!(
            record.doctor.diagnosis.as_ref().unwrap().primary(),
            "Influenza"
        );
        assert_eq!(
            record
                .pharmacist
                .medication
                .as_ref()
                .unwrap()
                .selected_option
                .as_deref(),
            Some("B")
        );
    }

    #[test]
    fn rejected_adoption_withholds_diagnosis_downstream() {
        let mut rules = vec![ScriptRule::payload(
            SchemaTag::Adoption,
            vec![],
            serde_json::json!({"adopt": false, "justification": "implausible ranking"}),
        )];
        rules.extend(scripted_rules());
        let world = World::new(rules);
        let ctx = world.ctx();
        let record = run_consultation(&ctx, &case(), &ModeFlags::full());
        assert_eq!(record.status, ConsultationStatus::Completed);
        assert!(!record.pharmacist.adoption.as_ref().unwrap().adopt);
        let diagnosis = record
            .doctor
            .diagnosis
            .as_ref()
            .unwrap()
            .primary()
            .to_string();
        for prompt in record
            .pharmacist
            .prompts
            .iter()
            .filter(|p| p.tag != SchemaTag::Adoption)
        {
            assert!(
                !prompt.user.contains(&diagnosis),
                "{:?} prompt leaked the rejected diagnosis",
                prompt.tag
            );
        }
    }

    #[test]
    fn failure_is_recorded_with_stage_not_panicked() {
        // medication options exist but scripts never produce a resolvable
        // answer, so the medication stage fails after its one repair
        let rules = vec![
            ScriptRule::payload(
                SchemaTag::Medication,
                vec![],
                serde_json::json!({"recommended": [{"drug": "Quinine", "rationale": "off-list"}]}),
            ),
            ScriptRule::payload(
                SchemaTag::Diagnosis,
                vec![],
                serde_json::json!({"ranked": [
                    {"condition": "Influenza", "rationale": "r"},
                    {"condition": "Pneumonia", "rationale": "r"},
                    {"condition": "Asthma", "rationale": "r"}
                ]}),
            ),
        ];
        let world = World::new(rules);
        let ctx = world.ctx();
        let record = run_consultation(&ctx, &case(), &ModeFlags::full());
        match &record.status {
            ConsultationStatus::Failed { stage, .. } => assert_eq!(stage, "medication"),
            other => panic!("expected failure, got {other:?}"),
        }
        assert!(record.pharmacist.medication.is_none());
        // doctor work is preserved in the record even though the case failed
        assert!(record.doctor.diagnosis.is_some());
    }
}
