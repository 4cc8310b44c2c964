//! Deterministic synthetic benchmark fixture.
//!
//! The generator plants, for every case, one diagnostic document reachable
//! only through the scripted doctor plan and one therapy document reachable
//! only through the scripted pharmacist plan. Vocabularies are disjoint by
//! construction: complaints share tokens with filler documents but not with
//! planted ones, so a naive search over the raw complaint surfaces filler
//! and the scripted answer rules fall through to their wrong branch. Each
//! document and case carries a fixed-width marker token (`case0003`,
//! `diag0003`, `med0003`) that the chat script keys on.
//!
//! Generation ends with a self-check against the same mock backends the
//! benchmark runs on: the planted chunk must come back at rank 1 for the
//! scripted query, and the complaint must not surface its own planted
//! markers. When the hash embedding happens to recall too few filler
//! documents for a complaint, a nonce token is appended and the check
//! reruns; the fixture is a pure function of its spec either way.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{option_letter, PatientCase};
use crate::kb::{chunk_document, ChunkParams, IndexPair, SourceDocument, VectorIndex};
use crate::llm::mock::{JudgeRule, MockEmbeddingBackend, MockRerankBackend, ScriptRule};
use crate::llm::{embed, RetryPolicy, SchemaTag};
use crate::retrieval::{search, RetrievalParams, RetrievalQuery};
use crate::types::Role;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CASES_FILE: &str = "cases.jsonl";
pub const CHAT_SCRIPT_FILE: &str = "chat_script.jsonl";
pub const JUDGE_SCRIPT_FILE: &str = "judge_script.jsonl";

const DEPARTMENTS: [&str; 5] = [
    "general medicine",
    "respiratory medicine",
    "cardiology",
    "neurology",
    "gastroenterology",
];

/// Nonce retries before the self-check gives up on a complaint.
const MAX_NONCE_ATTEMPTS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("bad fixture spec: {0}")]
    BadSpec(String),
    #[error("fixture self-check failed for {case_id}: {message}")]
    Verification { case_id: String, message: String },
    #[error("fixture generation: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs for the generator. The retrieval fields must mirror the settings
/// the benchmark will run with; the self-check runs against them.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub n_cases: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    pub top_k: usize,
    pub top_n: usize,
    pub n_filler_docs: usize,
    /// Case indices whose scripted medication answer is wrong even with the
    /// planted evidence in view. Diagnosis stays correct.
    pub corrupted_medication_cases: BTreeSet<usize>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_cases: 20,
            seed: 42,
            embedding_dim: 64,
            top_k: 20,
            top_n: 5,
            n_filler_docs: 30,
            corrupted_medication_cases: BTreeSet::new(),
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), FixtureError> {
        if self.n_cases == 0 || self.n_cases > 9999 {
            return Err(FixtureError::BadSpec(format!(
                "n_cases must be in 1..=9999, got {}",
                self.n_cases
            )));
        }
        if self.embedding_dim < 4 {
            return Err(FixtureError::BadSpec(
                "embedding_dim must be at least 4".into(),
            ));
        }
        if self.top_n == 0 || self.top_k < self.top_n {
            return Err(FixtureError::BadSpec(format!(
                "need top_k >= top_n >= 1, got top_k={} top_n={}",
                self.top_k, self.top_n
            )));
        }
        if self.n_filler_docs < self.top_n {
            return Err(FixtureError::BadSpec(format!(
                "need at least top_n={} filler docs to absorb naive searches, got {}",
                self.top_n, self.n_filler_docs
            )));
        }
        if let Some(&bad) = self
            .corrupted_medication_cases
            .iter()
            .find(|&&c| c >= self.n_cases)
        {
            return Err(FixtureError::BadSpec(format!(
                "corrupted case index {bad} out of range for {} cases",
                self.n_cases
            )));
        }
        Ok(())
    }
}

/// A generated benchmark: cases, corpus, and the scripts that make the mock
/// backends answer them.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub cases: Vec<PatientCase>,
    pub corpus: Vec<SourceDocument>,
    pub chat_rules: Vec<ScriptRule>,
    pub judge_rules: Vec<JudgeRule>,
}

impl Fixture {
    /// Departments the generator assigns; benchmark configs should accept
    /// at least these.
    pub fn departments() -> Vec<String> {
        DEPARTMENTS.iter().map(|d| d.to_string()).collect()
    }

    /// Write the four fixture files into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), FixtureError> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(CORPUS_FILE), &self.corpus)?;
        write_jsonl(&dir.join(CASES_FILE), &self.cases)?;
        write_jsonl(&dir.join(CHAT_SCRIPT_FILE), &self.chat_rules)?;
        write_jsonl(&dir.join(JUDGE_SCRIPT_FILE), &self.judge_rules)?;
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FixtureError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| FixtureError::Internal(format!("serialize {}: {e}", path.display())))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

struct CaseDraft {
    case: PatientCase,
    marker: String,
    diag_marker: String,
    med_marker: String,
    diag_doc: SourceDocument,
    med_doc: SourceDocument,
}

fn pick_tokens(rng: &mut ChaCha8Rng, prefix: &str, pool: usize, n: usize) -> Vec<String> {
    let mut indices: Vec<usize> = (0..pool).collect();
    indices.shuffle(rng);
    indices.truncate(n);
    indices
        .into_iter()
        .map(|k| format!("{prefix}{k:02}"))
        .collect()
}

fn draft_case(i: usize, rng: &mut ChaCha8Rng) -> CaseDraft {
    let case_id = format!("case-{i:04}");
    let marker = format!("case{i:04}");
    let diag_marker = format!("diag{i:04}");
    let med_marker = format!("med{i:04}");
    let department = DEPARTMENTS[i % DEPARTMENTS.len()].to_string();

    let syms = pick_tokens(rng, "sym", 40, 3).join(" ");
    let complaint = format!("{marker} patient reports {syms} persisting recently");

    let gold_diagnosis = format!("cond{i:04} syndrome");
    let diag_decoys: Vec<String> = ["a", "b", "c"]
        .iter()
        .map(|s| format!("alt{i:04}{s} syndrome"))
        .collect();
    let gold_medication = format!("drug{i:04} tablets");
    let med_decoys: Vec<String> = ["a", "b", "c"]
        .iter()
        .map(|s| format!("plc{i:04}{s} tablets"))
        .collect();

    let dias = pick_tokens(rng, "dia", 40, 3).join(" ");
    let diag_doc = SourceDocument {
        doc_id: format!("diag-{i:04}"),
        title: format!("Clinical features of cond{i:04}"),
        body: format!("{diag_marker} condition cond{i:04} features {dias} distinguishing criteria"),
        metadata: [
            ("kind".to_string(), "diagnostic".to_string()),
            ("case".to_string(), case_id.clone()),
            ("target".to_string(), "DoctorOnly".to_string()),
        ]
        .into(),
    };

    let mdcs = pick_tokens(rng, "mdc", 40, 3).join(" ");
    let med_doc = SourceDocument {
        doc_id: format!("med-{i:04}"),
        title: format!("Therapy guidance for drug{i:04}"),
        body: format!("{med_marker} therapy drug{i:04} guidance {mdcs} administration notes"),
        metadata: [
            ("kind".to_string(), "therapy".to_string()),
            ("case".to_string(), case_id.clone()),
            ("target".to_string(), "PharmacistOnly".to_string()),
        ]
        .into(),
    };

    // Even-index cases are multiple choice, odd ones free text.
    let (diagnosis_options, medication_options) = if i.is_multiple_of(2) {
        let mut diag_opts = vec![gold_diagnosis.clone()];
        diag_opts.extend(diag_decoys.iter().cloned());
        diag_opts.shuffle(rng);
        let mut med_opts = vec![gold_medication.clone()];
        med_opts.extend(med_decoys.iter().cloned());
        med_opts.shuffle(rng);
        (Some(diag_opts), Some(med_opts))
    } else {
        (None, None)
    };

    let case = PatientCase {
        case_id,
        complaint,
        gold_diagnosis,
        gold_medication,
        diagnosis_options,
        medication_options,
        department: Some(department),
    };
    CaseDraft {
        case,
        marker,
        diag_marker,
        med_marker,
        diag_doc,
        med_doc,
    }
}

fn letter_for(options: Option<&Vec<String>>, answer: &str) -> Option<String> {
    let options = options?;
    let idx = options.iter().position(|o| o == answer)?;
    Some(option_letter(idx).to_string())
}

fn case_rules(draft: &CaseDraft, corrupted: bool) -> Vec<ScriptRule> {
    let case = &draft.case;
    let marker = draft.marker.clone();
    let i = &case.case_id[5..];
    let diag_decoy = |s: &str| format!("alt{i}{s} syndrome");
    let med_decoy = |s: &str| format!("plc{i}{s} tablets");

    let mut rules = Vec::new();
    rules.push(ScriptRule::payload(
        SchemaTag::Plan,
        vec![marker.clone()],
        json!({
            "department": case.department.clone().unwrap_or_default(),
            "queries": [draft.diag_doc.body],
            "reasoning": "scripted plan targeting the planted diagnostic note",
        }),
    ));
    rules.push(ScriptRule::payload(
        SchemaTag::Queries,
        vec!["Role: pharmacist".into(), marker.clone()],
        json!({ "queries": [draft.med_doc.body] }),
    ));

    // Gold branch first: it needs both the case and the planted marker in
    // the prompt, so it only fires once the evidence actually surfaced.
    rules.push(ScriptRule::payload(
        SchemaTag::Diagnosis,
        vec![marker.clone(), draft.diag_marker.clone()],
        json!({ "ranked": [
            { "condition": case.gold_diagnosis, "rationale": "matches the planted features" },
            { "condition": diag_decoy("a") },
            { "condition": diag_decoy("b") },
        ]}),
    ));
    rules.push(ScriptRule::payload(
        SchemaTag::Diagnosis,
        vec![marker.clone()],
        json!({ "ranked": [
            { "condition": diag_decoy("a"), "rationale": "guess without planted evidence" },
            { "condition": diag_decoy("b") },
            { "condition": diag_decoy("c") },
        ]}),
    ));

    let honest_drug = if corrupted {
        med_decoy("a")
    } else {
        case.gold_medication.clone()
    };
    rules.push(ScriptRule::payload(
        SchemaTag::Medication,
        vec![marker.clone(), draft.med_marker.clone()],
        json!({
            "recommended": [{ "drug": honest_drug, "rationale": "per the planted guidance" }],
            "selected_option": letter_for(case.medication_options.as_ref(), &honest_drug),
        }),
    ));
    rules.push(ScriptRule::payload(
        SchemaTag::Medication,
        vec![marker],
        json!({
            "recommended": [{ "drug": med_decoy("a"), "rationale": "guess without planted guidance" }],
            "selected_option": letter_for(case.medication_options.as_ref(), &med_decoy("a")),
        }),
    ));
    rules
}

fn classify_rule(doc_id: &str, target: &str) -> ScriptRule {
    ScriptRule::payload(
        SchemaTag::Classify,
        vec![format!("doc_id: {doc_id}\n")],
        json!({ "target": target, "rationale": "scripted routing" }),
    )
}

/// Build the retrieval indexes exactly as the benchmark will: default
/// chunking, hash embeddings, routing per the classify script.
fn build_check_indexes(
    fixture_docs: &[(SourceDocument, Role2)],
    spec: &FixtureSpec,
    embedder: &MockEmbeddingBackend,
) -> Result<IndexPair, FixtureError> {
    let params = ChunkParams::default();
    let retry = RetryPolicy::immediate();
    let mut pair = IndexPair {
        doctor: VectorIndex::new(Role::Doctor, spec.embedding_dim),
        pharmacist: VectorIndex::new(Role::Pharmacist, spec.embedding_dim),
    };
    for (doc, scope) in fixture_docs {
        let chunks = chunk_document(doc, &params)
            .map_err(|e| FixtureError::Internal(format!("chunk {}: {e}", doc.doc_id)))?;
        for chunk in chunks {
            let vector = embed(embedder, &[&chunk.text], &retry)
                .map_err(|e| FixtureError::Internal(format!("embed {}: {e}", chunk.chunk_id)))?
                .remove(0);
            if scope.doctor {
                pair.doctor
                    .insert(chunk.clone(), vector.clone())
                    .map_err(int_err)?;
            }
            if scope.pharmacist {
                pair.pharmacist.insert(chunk, vector).map_err(int_err)?;
            }
        }
    }
    Ok(pair)
}

fn int_err(e: impl std::fmt::Display) -> FixtureError {
    FixtureError::Internal(e.to_string())
}

#[derive(Clone, Copy)]
struct Role2 {
    doctor: bool,
    pharmacist: bool,
}

/// Generate a fixture. Output is a pure function of the spec.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Filler notes share plain-language tokens with every complaint, so a
    // naive complaint search has plenty of harmless material to rank.
    let fillers: Vec<SourceDocument> = (0..spec.n_filler_docs)
        .map(|j| {
            let fils = pick_tokens(&mut rng, "fil", 40, 2).join(" ");
            SourceDocument {
                doc_id: format!("filler-{j:03}"),
                title: format!("General care note {j:03}"),
                body: format!("filler note patient reports general observations {fils} recently"),
                metadata: [
                    ("kind".to_string(), "filler".to_string()),
                    ("target".to_string(), "Both".to_string()),
                ]
                .into(),
            }
        })
        .collect();

    let mut drafts: Vec<CaseDraft> = (0..spec.n_cases).map(|i| draft_case(i, &mut rng)).collect();

    let mut chat_rules = Vec::new();
    for draft in &drafts {
        chat_rules.push(classify_rule(&draft.diag_doc.doc_id, "DoctorOnly"));
        chat_rules.push(classify_rule(&draft.med_doc.doc_id, "PharmacistOnly"));
    }
    for filler in &fillers {
        chat_rules.push(classify_rule(&filler.doc_id, "Both"));
    }
    for (i, draft) in drafts.iter().enumerate() {
        chat_rules.extend(case_rules(
            draft,
            spec.corrupted_medication_cases.contains(&i),
        ));
    }

    let judge_rules: Vec<JudgeRule> = drafts
        .iter()
        .map(|draft| JudgeRule {
            matches: vec![draft.marker.clone()],
            relevance: vec![8, 6],
            contribution: vec![7, 5],
        })
        .collect();

    // Self-check on the exact backends the benchmark uses.
    let embedder = MockEmbeddingBackend::new(spec.seed, spec.embedding_dim);
    let reranker = MockRerankBackend::TokenOverlap;
    let retry = RetryPolicy::immediate();
    let params = RetrievalParams {
        top_k: spec.top_k,
        top_n: spec.top_n,
    };

    let mut check_docs: Vec<(SourceDocument, Role2)> = Vec::new();
    for draft in &drafts {
        check_docs.push((
            draft.diag_doc.clone(),
            Role2 {
                doctor: true,
                pharmacist: false,
            },
        ));
        check_docs.push((
            draft.med_doc.clone(),
            Role2 {
                doctor: false,
                pharmacist: true,
            },
        ));
    }
    for filler in &fillers {
        check_docs.push((
            filler.clone(),
            Role2 {
                doctor: true,
                pharmacist: true,
            },
        ));
    }
    let pair = build_check_indexes(&check_docs, spec, &embedder)?;

    for draft in &mut drafts {
        let case_id = draft.case.case_id.clone();

        // Planted chunks must be exact top hits for their scripted queries.
        for (role, doc, marker) in [
            (Role::Doctor, &draft.diag_doc, &draft.diag_marker),
            (Role::Pharmacist, &draft.med_doc, &draft.med_marker),
        ] {
            let query = RetrievalQuery {
                text: doc.body.clone(),
                role,
                round: 0,
            };
            let result =
                search(&pair, &embedder, &reranker, &query, &params, &retry).map_err(int_err)?;
            let top = result
                .docs
                .first()
                .ok_or_else(|| FixtureError::Verification {
                    case_id: case_id.clone(),
                    message: format!("scripted {role} query returned nothing"),
                })?;
            if !top.text.contains(marker.as_str()) {
                return Err(FixtureError::Verification {
                    case_id,
                    message: format!(
                        "scripted {role} query ranked {} first instead of {}",
                        top.chunk_id, doc.doc_id
                    ),
                });
            }
        }

        // The raw complaint must not reach the planted documents. The hash
        // embedding is content-blind, so occasionally too few fillers land
        // in the coarse pool; a nonce re-rolls the complaint vector.
        let base = draft.case.complaint.clone();
        let mut accepted = false;
        for attempt in 0..MAX_NONCE_ATTEMPTS {
            let candidate = if attempt == 0 {
                base.clone()
            } else {
                format!("{base} nonce{attempt:02}")
            };
            let mut leaked = false;
            for (role, marker) in [
                (Role::Doctor, &draft.diag_marker),
                (Role::Pharmacist, &draft.med_marker),
            ] {
                let query = RetrievalQuery {
                    text: candidate.clone(),
                    role,
                    round: 0,
                };
                let result = search(&pair, &embedder, &reranker, &query, &params, &retry)
                    .map_err(int_err)?;
                if result.docs.iter().any(|d| d.text.contains(marker.as_str())) {
                    leaked = true;
                    break;
                }
            }
            if !leaked {
                draft.case.complaint = candidate;
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(FixtureError::Verification {
                case_id,
                message: format!(
                    "complaint still reaches planted evidence after {MAX_NONCE_ATTEMPTS} nonces"
                ),
            });
        }
    }

    let mut corpus: Vec<SourceDocument> = Vec::new();
    for draft in &drafts {
        corpus.push(draft.diag_doc.clone());
        corpus.push(draft.med_doc.clone());
    }
    corpus.extend(fillers);

    let cases: Vec<PatientCase> = drafts.into_iter().map(|d| d.case).collect();
    for case in &cases {
        case.validate().map_err(int_err)?;
    }

    Ok(Fixture {
        spec: spec.clone(),
        cases,
        corpus,
        chat_rules,
        judge_rules,
    })
}
