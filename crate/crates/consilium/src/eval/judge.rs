//! Judged evidence quality. Each retrieved document is scored 0..=10 for
//! relevance (against the question) and contribution (against the gold
//! answer); a case's score on each rubric is the maximum over its documents,
//! since one decisive document is enough.

use serde::{Deserialize, Serialize};

use crate::agents::ConsultationRecord;
use crate::dataset::PatientCase;
use crate::llm::{judge, JudgeBackend, JudgeRubric, LlmError};

use super::EvalError;

/// Max-aggregated scores for one evidence set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceJudgement {
    pub relevance_max: u8,
    pub contribution_max: u8,
}

/// Judge one evidence set. Empty evidence scores (0, 0) without calling the
/// backend; there is nothing to credit.
pub fn judge_evidence(
    backend: &dyn JudgeBackend,
    question: &str,
    texts: &[&str],
    gold: &str,
) -> Result<EvidenceJudgement, LlmError> {
    if texts.is_empty() {
        return Ok(EvidenceJudgement {
            relevance_max: 0,
            contribution_max: 0,
        });
    }
    let relevance = judge(backend, question, texts, JudgeRubric::Relevance, None)?;
    let contribution = judge(
        backend,
        question,
        texts,
        JudgeRubric::Contribution,
        Some(gold),
    )?;
    Ok(EvidenceJudgement {
        relevance_max: relevance.into_iter().max().unwrap_or(0),
        contribution_max: contribution.into_iter().max().unwrap_or(0),
    })
}

/// Mean per-case maxima for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricMeans {
    pub relevance: f64,
    pub contribution: f64,
}

/// Judged evidence quality for both agents over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub n_cases: usize,
    pub doctor: RubricMeans,
    pub pharmacist: RubricMeans,
}

/// Judge every record's final evidence. The doctor's evidence is judged
/// against the gold diagnosis, the pharmacist's against the gold medication.
pub fn judge_records(
    backend: &dyn JudgeBackend,
    cases: &[PatientCase],
    records: &[ConsultationRecord],
) -> Result<JudgeReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let by_id: std::collections::BTreeMap<&str, &PatientCase> =
        cases.iter().map(|c| (c.case_id.as_str(), c)).collect();

    let mut doctor_rel = 0u64;
    let mut doctor_con = 0u64;
    let mut pharm_rel = 0u64;
    let mut pharm_con = 0u64;
    for record in records {
        let case = by_id
            .get(record.case_id.as_str())
            .ok_or_else(|| EvalError::UnknownCase {
                case_id: record.case_id.clone(),
            })?;
        let judge_side = |texts: Vec<&str>, gold: &str| {
            judge_evidence(backend, &case.complaint, &texts, gold).map_err(|source| {
                EvalError::Judge {
                    case_id: record.case_id.clone(),
                    source,
                }
            })
        };
        let d = judge_side(
            record
                .doctor
                .evidence
                .iter()
                .map(|d| d.text.as_str())
                .collect(),
            &case.gold_diagnosis,
        )?;
        let p = judge_side(
            record
                .pharmacist
                .evidence
                .iter()
                .map(|d| d.text.as_str())
                .collect(),
            &case.gold_medication,
        )?;
        doctor_rel += d.relevance_max as u64;
        doctor_con += d.contribution_max as u64;
        pharm_rel += p.relevance_max as u64;
        pharm_con += p.contribution_max as u64;
    }

    let n = records.len() as f64;
    Ok(JudgeReport {
        n_cases: records.len(),
        doctor: RubricMeans {
            relevance: doctor_rel as f64 / n,
            contribution: doctor_con as f64 / n,
        },
        pharmacist: RubricMeans {
            relevance: pharm_rel as f64 / n,
            contribution: pharm_con as f64 / n,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{JudgeRule, MockJudgeBackend};
    use crate::llm::BackendError;

    #[test]
    fn max_aggregation_takes_the_best_document() {
        let backend = MockJudgeBackend::from_rules(vec![JudgeRule {
            matches: vec![],
            relevance: vec![2, 9, 4],
            contribution: vec![1, 3, 7],
        }]);
        let j = judge_evidence(&backend, "q", &["d1", "d2", "d3"], "gold").unwrap();
        assert_eq!(j.relevance_max, 9);
        assert_eq!(j.contribution_max, 7);
    }

    #[test]
    fn empty_evidence_scores_zero_without_backend() {
        struct Panicking;
        impl JudgeBackend for Panicking {
            fn judge(
                &self,
                _: &str,
                _: &[&str],
                _: crate::llm::JudgeRubric,
                _: Option<&str>,
            ) -> Result<Vec<u8>, BackendError> {
                panic!("must not be called for empty evidence");
            }
        }
        let j = judge_evidence(&Panicking, "q", &[], "gold").unwrap();
        assert_eq!((j.relevance_max, j.contribution_max), (0, 0));
    }

    #[test]
    fn single_document_max_is_its_own_score() {
        let backend = MockJudgeBackend::from_rules(vec![JudgeRule {
            matches: vec![],
            relevance: vec![6],
            contribution: vec![2],
        }]);
        let j = judge_evidence(&backend, "q", &["only"], "gold").unwrap();
        assert_eq!((j.relevance_max, j.contribution_max), (6, 2));
    }
}
