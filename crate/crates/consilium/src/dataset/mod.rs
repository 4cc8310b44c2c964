//! Benchmark datasets: patient cases, corpus documents, and a deterministic
//! synthetic fixture generator for offline end-to-end runs.

mod fixture;

pub use fixture::{
    generate_fixture, Fixture, FixtureError, FixtureSpec, CASES_FILE, CHAT_SCRIPT_FILE,
    CORPUS_FILE, JUDGE_SCRIPT_FILE,
};

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::SourceDocument;
use crate::text::normalize_answer;

/// One benchmark case. Option lists are present for multiple-choice cases and
/// absent for free-text ones; the two answer fields are always gold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub case_id: String,
    pub complaint: String,
    pub gold_diagnosis: String,
    pub gold_medication: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis_options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medication_options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line} ({case_id}): {message}")]
    Invalid {
        line: usize,
        case_id: String,
        message: String,
    },
    #[error("line {line}: duplicate id {id}")]
    Duplicate { line: usize, id: String },
    #[error("dataset is empty")]
    Empty,
}

/// Letter label for a 0-based option index: 0 -> A, 1 -> B, ...
pub fn option_letter(index: usize) -> char {
    assert!(index < 26, "option index out of letter range");
    (b'A' + index as u8) as char
}

/// Parse an answer that names an option by letter ("B", "b.", "(B)").
pub fn letter_index(answer: &str) -> Option<usize> {
    let cleaned: Vec<char> = answer
        .trim()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect();
    match cleaned[..] {
        [c] if c.is_ascii_alphabetic() => Some((c.to_ascii_uppercase() as u8 - b'A') as usize),
        _ => None,
    }
}

/// Resolve an answer against an option list, by letter or by normalized text.
pub fn match_option(options: &[String], answer: &str) -> Option<usize> {
    if let Some(i) = letter_index(answer) {
        if i < options.len() {
            return Some(i);
        }
    }
    let wanted = normalize_answer(answer);
    options.iter().position(|o| normalize_answer(o) == wanted)
}

fn validate_options(kind: &str, options: &[String], gold: &str) -> Result<(), String> {
    if options.len() < 2 {
        return Err(format!("{kind} needs at least 2 options"));
    }
    if options.len() > 26 {
        return Err(format!("{kind} exceeds 26 options"));
    }
    let mut seen = BTreeSet::new();
    for o in options {
        if o.trim().is_empty() {
            return Err(format!("{kind} contains an empty option"));
        }
        if !seen.insert(normalize_answer(o)) {
            return Err(format!("{kind} contains duplicate option {o:?}"));
        }
    }
    if match_option(options, gold).is_none() {
        return Err(format!("gold answer {gold:?} is not among {kind}"));
    }
    Ok(())
}

impl PatientCase {
    pub fn validate(&self) -> Result<(), String> {
        for (field, value) in [
            ("case_id", &self.case_id),
            ("complaint", &self.complaint),
            ("gold_diagnosis", &self.gold_diagnosis),
            ("gold_medication", &self.gold_medication),
        ] {
            if value.trim().is_empty() {
                return Err(format!("{field} must be non-empty"));
            }
        }
        if let Some(options) = &self.diagnosis_options {
            validate_options("diagnosis_options", options, &self.gold_diagnosis)?;
        }
        if let Some(options) = &self.medication_options {
            validate_options("medication_options", options, &self.gold_medication)?;
        }
        Ok(())
    }
}

fn read_jsonl<T, F>(path: &Path, mut handle: F) -> Result<Vec<T>, DatasetError>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(usize, &T) -> Result<(), DatasetError>,
{
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        handle(lineno, &item)?;
        out.push(item);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

/// Load cases from line-delimited JSON. Errors carry the 1-based line number.
pub fn load_cases(path: &Path) -> Result<Vec<PatientCase>, DatasetError> {
    let mut seen = BTreeSet::new();
    read_jsonl(path, |lineno, case: &PatientCase| {
        case.validate().map_err(|message| DatasetError::Invalid {
            line: lineno,
            case_id: case.case_id.clone(),
            message,
        })?;
        if !seen.insert(case.case_id.clone()) {
            return Err(DatasetError::Duplicate {
                line: lineno,
                id: case.case_id.clone(),
            });
        }
        Ok(())
    })
}

/// Load corpus documents from line-delimited JSON.
pub fn load_corpus(path: &Path) -> Result<Vec<SourceDocument>, DatasetError> {
    let mut seen = BTreeSet::new();
    read_jsonl(path, |lineno, doc: &SourceDocument| {
        doc.validate().map_err(|e| DatasetError::Invalid {
            line: lineno,
            case_id: doc.doc_id.clone(),
            message: e.to_string(),
        })?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(DatasetError::Duplicate {
                line: lineno,
                id: doc.doc_id.clone(),
            });
        }
        Ok(())
    })
}
