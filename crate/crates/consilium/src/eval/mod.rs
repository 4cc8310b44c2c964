//! Evaluation: answer matching, accuracy aggregation, judged evidence
//! quality, lexical overlap between the two agents' evidence, and the
//! ablation grid.

mod judge;
mod rouge;
mod specialization;

pub use judge::{judge_evidence, judge_records, EvidenceJudgement, JudgeReport, RubricMeans};
pub use rouge::{rouge_l, rouge_n, rouge_scores, RougeScores};
pub use specialization::{specialization_overlap, OverlapStats, SpecializationReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentMode, ConsultationRecord, ConsultationStatus, ModeFlags};
use crate::dataset::{match_option, PatientCase};
use crate::text::normalize_answer;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scores to aggregate")]
    Empty,
    #[error("record {case_id} has no matching case")]
    UnknownCase { case_id: String },
    #[error("judge failed on {case_id}: {source}")]
    Judge {
        case_id: String,
        #[source]
        source: crate::llm::LlmError,
    },
}

/// Compare a predicted answer against gold. With options the comparison is by
/// resolved option index (letter or text); without, by normalized text.
pub fn match_answer(predicted: &str, gold: &str, options: Option<&[String]>) -> bool {
    match options {
        Some(options) => match (
            match_option(options, predicted),
            match_option(options, gold),
        ) {
            (Some(p), Some(g)) => p == g,
            _ => false,
        },
        None => normalize_answer(predicted) == normalize_answer(gold),
    }
}

/// Binary outcomes for one case. A failed consultation scores all-miss but
/// still counts in the denominator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub completed: bool,
    pub top1: bool,
    pub top3: bool,
    pub drug: bool,
}

/// Score one consultation against its case.
pub fn score_case(case: &PatientCase, record: &ConsultationRecord) -> CaseScore {
    let completed = matches!(record.status, ConsultationStatus::Completed);
    let miss = CaseScore {
        case_id: case.case_id.clone(),
        completed,
        top1: false,
        top3: false,
        drug: false,
    };
    if !completed {
        return miss;
    }

    let (top1, top3) = match &record.doctor.diagnosis {
        Some(diagnosis) => {
            let options = case.diagnosis_options.as_deref();
            let top1 = match_answer(diagnosis.primary(), &case.gold_diagnosis, options);
            let top3 = diagnosis
                .ranked
                .iter()
                .take(3)
                .any(|c| match_answer(&c.condition, &case.gold_diagnosis, options));
            (top1, top3)
        }
        None => (false, false),
    };

    let drug = match &record.pharmacist.medication {
        Some(plan) => match (&case.medication_options, &plan.selected_option) {
            (Some(options), Some(selected)) => {
                match_answer(selected, &case.gold_medication, Some(options))
            }
            (Some(options), None) => plan
                .recommended
                .first()
                .is_some_and(|r| match_answer(&r.drug, &case.gold_medication, Some(options))),
            (None, _) => plan
                .recommended
                .first()
                .is_some_and(|r| match_answer(&r.drug, &case.gold_medication, None)),
        },
        None => false,
    };

    CaseScore {
        case_id: case.case_id.clone(),
        completed,
        top1,
        top3,
        drug,
    }
}

/// Score a batch, pairing records to cases by id.
pub fn score_records(
    cases: &[PatientCase],
    records: &[ConsultationRecord],
) -> Result<Vec<CaseScore>, EvalError> {
    let by_id: std::collections::BTreeMap<&str, &PatientCase> =
        cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    records
        .iter()
        .map(|record| {
            by_id
                .get(record.case_id.as_str())
                .map(|case| score_case(case, record))
                .ok_or_else(|| EvalError::UnknownCase {
                    case_id: record.case_id.clone(),
                })
        })
        .collect()
}

/// Accuracy over a batch. Ratios are exact hit counts over the case count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_cases: usize,
    pub failed: usize,
    pub top1_hits: usize,
    pub top3_hits: usize,
    pub drug_hits: usize,
    pub top1_acc: f64,
    pub top3_acc: f64,
    pub drug_acc: f64,
}

pub fn aggregate(scores: &[CaseScore]) -> Result<AccuracyReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = scores.len();
    let top1_hits = scores.iter().filter(|s| s.top1).count();
    let top3_hits = scores.iter().filter(|s| s.top3).count();
    let drug_hits = scores.iter().filter(|s| s.drug).count();
    Ok(AccuracyReport {
        n_cases: n,
        failed: scores.iter().filter(|s| !s.completed).count(),
        top1_hits,
        top3_hits,
        drug_hits,
        top1_acc: top1_hits as f64 / n as f64,
        top3_acc: top3_hits as f64 / n as f64,
        drug_acc: drug_hits as f64 / n as f64,
    })
}

/// The four mode combinations, full system first, naive baseline last.
pub fn ablation_grid() -> [ModeFlags; 4] {
    [
        ModeFlags {
            doctor: AgentMode::Reflective,
            pharmacist: AgentMode::Reflective,
        },
        ModeFlags {
            doctor: AgentMode::Reflective,
            pharmacist: AgentMode::Naive,
        },
        ModeFlags {
            doctor: AgentMode::Naive,
            pharmacist: AgentMode::Reflective,
        },
        ModeFlags {
            doctor: AgentMode::Naive,
            pharmacist: AgentMode::Naive,
        },
    ]
}

/// One ablation configuration's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub modes: ModeFlags,
    pub accuracy: AccuracyReport,
}

/// Run the grid with a caller-supplied batch executor (the CLI parallelizes
/// it; tests run it inline).
pub fn run_ablation<F>(
    cases: &[PatientCase],
    mut run_batch: F,
) -> Result<Vec<AblationRow>, EvalError>
where
    F: FnMut(&ModeFlags) -> Vec<ConsultationRecord>,
{
    ablation_grid()
        .iter()
        .map(|modes| {
            let records = run_batch(modes);
            let scores = score_records(cases, &records)?;
            Ok(AblationRow {
                label: modes.label(),
                modes: *modes,
                accuracy: aggregate(&scores)?,
            })
        })
        .collect()
}

/// The bench command's aggregate output. Deliberately contains no timing, so
/// identical inputs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n_cases: usize,
    pub accuracy: AccuracyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeReport>,
    pub specialization: SpecializationReport,
}
