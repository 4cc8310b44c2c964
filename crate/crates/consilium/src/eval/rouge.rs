//! ROUGE-1, ROUGE-2, and ROUGE-L F1 over the shared tokenizer (casefolded,
//! punctuation-splitting). Used to measure lexical overlap between the two
//! agents' evidence, not answer quality.

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

pub fn rouge_scores(candidate: &str, reference: &str) -> RougeScores {
    RougeScores {
        rouge1: rouge_n(candidate, reference, 1),
        rouge2: rouge_n(candidate, reference, 2),
        rouge_l: rouge_l(candidate, reference),
    }
}

fn f1(overlap: usize, candidate_total: usize, reference_total: usize) -> f64 {
    if candidate_total == 0 || reference_total == 0 || overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / candidate_total as f64;
    let recall = overlap as f64 / reference_total as f64;
    2.0 * precision * recall / (precision + recall)
}

fn ngram_counts(tokens: &[String], n: usize) -> std::collections::HashMap<&[String], usize> {
    let mut counts: std::collections::HashMap<&[String], usize> = Default::default();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// N-gram overlap F1 with clipped counts (each reference n-gram matches at
/// most as often as it occurs).
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    assert!(n > 0, "n-gram order must be positive");
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.len() < n || refr.len() < n {
        return 0.0;
    }
    let cand_counts = ngram_counts(&cand, n);
    let ref_counts = ngram_counts(&refr, n);
    let overlap: usize = cand_counts
        .iter()
        .map(|(gram, c)| (*c).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    f1(overlap, cand.len() - n + 1, refr.len() - n + 1)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // single-row dynamic program; rows are the shorter side
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for item in long {
        let mut prev_diag = 0;
        for (j, s) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if item == s {
                prev_diag + 1
            } else {
                up.max(row[j])
            };
            prev_diag = up;
        }
    }
    row[short.len()]
}

/// Longest-common-subsequence F1.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    f1(lcs_len(&cand, &refr), cand.len(), refr.len())
}
