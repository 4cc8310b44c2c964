//! Lexical overlap between the doctor's and the pharmacist's final evidence.
//! Low overlap is the signature of role specialization: the two agents pulled
//! from genuinely different knowledge.

use serde::{Deserialize, Serialize};

use crate::agents::ConsultationRecord;
use crate::retrieval::RetrievedDoc;

use super::rouge::rouge_scores;

/// Distribution summary of one overlap metric across cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub mean: f64,
    pub median: f64,
    /// Ten equal bins over [0, 1]; scores of exactly 1.0 land in the last bin.
    pub histogram: [usize; 10],
}

fn stats(mut values: Vec<f64>) -> OverlapStats {
    if values.is_empty() {
        return OverlapStats {
            mean: 0.0,
            median: 0.0,
            histogram: [0; 10],
        };
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("overlap scores are finite"));
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    let mut histogram = [0usize; 10];
    for v in &values {
        let bin = ((v * 10.0) as usize).min(9);
        histogram[bin] += 1;
    }
    OverlapStats {
        mean,
        median,
        histogram,
    }
}

/// Overlap of the two agents' evidence across a batch. Cases where either
/// agent retrieved nothing are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationReport {
    pub n_cases: usize,
    pub skipped: usize,
    pub rouge1: OverlapStats,
    pub rouge2: OverlapStats,
    pub rouge_l: OverlapStats,
}

/// Evidence texts concatenated in chunk id order, so the comparison does not
/// depend on rank order.
fn concat_evidence(docs: &[RetrievedDoc]) -> String {
    let mut sorted: Vec<&RetrievedDoc> = docs.iter().collect();
    sorted.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    sorted
        .iter()
        .map(|d| d.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn specialization_overlap(records: &[ConsultationRecord]) -> SpecializationReport {
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut rl = Vec::new();
    let mut skipped = 0usize;
    for record in records {
        if record.doctor.evidence.is_empty() || record.pharmacist.evidence.is_empty() {
            skipped += 1;
            continue;
        }
        let doctor = concat_evidence(&record.doctor.evidence);
        let pharmacist = concat_evidence(&record.pharmacist.evidence);
        let scores = rouge_scores(&doctor, &pharmacist);
        r1.push(scores.rouge1);
        r2.push(scores.rouge2);
        rl.push(scores.rouge_l);
    }
    SpecializationReport {
        n_cases: records.len(),
        skipped,
        rouge1: stats(r1),
        rouge2: stats(r2),
        rouge_l: stats(rl),
    }
}
