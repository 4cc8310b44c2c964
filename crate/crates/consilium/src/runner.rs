//! Command implementations behind the CLI. Everything here returns data and
//! writes artifacts; printing and exit codes are the binary's concern.
//!
//! Artifacts are deterministic for a given config and inputs: records are
//! sorted by case id before writing and reports carry no timing, so reruns
//! and different worker counts produce identical report bytes. Per-case
//! `elapsed_ms` lives only in the records files.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{run_consultation, AgentContext, AgentMode, ConsultationRecord, ModeFlags};
use crate::config::{
    ChatBackendConfig, EmbeddingBackendConfig, JudgeBackendConfig, RerankBackendConfig,
    SystemConfig,
};
use crate::dataset::{
    generate_fixture, load_cases, load_corpus, Fixture, FixtureSpec, PatientCase,
};
use crate::eval::{
    ablation_grid, aggregate, judge_records, score_records, specialization_overlap, AblationRow,
    JudgeReport, RunReport,
};
use crate::kb::{build_indexes, load_index, persist_index, ChunkParams, IndexPair, Lexicon};
use crate::llm::http::{
    HttpChatBackend, HttpEmbeddingBackend, HttpJudgeBackend, HttpRerankBackend,
};
use crate::llm::mock::{
    MockChatBackend, MockEmbeddingBackend, MockJudgeBackend, MockRerankBackend,
};
use crate::llm::{ChatBackend, EmbeddingBackend, JudgeBackend, RerankBackend, RetryPolicy};
use crate::types::Role;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Kb(#[from] crate::kb::KbError),
    #[error(transparent)]
    Store(#[from] crate::kb::StoreError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Fixture(#[from] crate::dataset::FixtureError),
    #[error("backend setup: {0}")]
    Backend(crate::llm::BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// The live backend set, mock or http per config.
pub struct Backends {
    pub chat: Box<dyn ChatBackend>,
    pub embedder: Box<dyn EmbeddingBackend>,
    pub reranker: Box<dyn RerankBackend>,
    pub judge: Box<dyn JudgeBackend>,
}

pub fn build_backends(config: &SystemConfig) -> Result<Backends, RunnerError> {
    let chat: Box<dyn ChatBackend> = match &config.backends.chat {
        ChatBackendConfig::Mock { script: Some(path) } => {
            Box::new(MockChatBackend::from_script_file(path)?)
        }
        ChatBackendConfig::Mock { script: None } => Box::new(MockChatBackend::empty()),
        ChatBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Box::new(
            HttpChatBackend::new(base_url, model, api_key_env).map_err(RunnerError::Backend)?,
        ),
    };
    let embedder: Box<dyn EmbeddingBackend> = match &config.backends.embedding {
        EmbeddingBackendConfig::Mock => {
            Box::new(MockEmbeddingBackend::new(config.seed, config.embedding_dim))
        }
        EmbeddingBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Box::new(
            HttpEmbeddingBackend::new(base_url, model, api_key_env, config.embedding_dim)
                .map_err(RunnerError::Backend)?,
        ),
    };
    let reranker: Box<dyn RerankBackend> = match &config.backends.rerank {
        RerankBackendConfig::Mock => Box::new(MockRerankBackend::TokenOverlap),
        RerankBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Box::new(
            HttpRerankBackend::new(base_url, model, api_key_env).map_err(RunnerError::Backend)?,
        ),
    };
    let judge: Box<dyn JudgeBackend> = match &config.backends.judge {
        JudgeBackendConfig::Mock { script: Some(path) } => {
            Box::new(MockJudgeBackend::from_script_file(path)?)
        }
        JudgeBackendConfig::Mock { script: None } => Box::new(MockJudgeBackend::default()),
        JudgeBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Box::new(
            HttpJudgeBackend::new(base_url, model, api_key_env).map_err(RunnerError::Backend)?,
        ),
    };
    Ok(Backends {
        chat,
        embedder,
        reranker,
        judge,
    })
}

/// What `build_kb` wrote, persisted alongside the indexes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbManifest {
    pub seed: u64,
    pub embedding_dim: usize,
    pub chunking: ChunkParams,
    pub n_docs: usize,
    pub doctor_chunks: usize,
    pub pharmacist_chunks: usize,
    pub documents: Vec<crate::kb::DocAssignment>,
}

/// Build both role indexes from the corpus and persist them with a manifest.
pub fn build_kb(config: &SystemConfig) -> Result<KbManifest, RunnerError> {
    let corpus = load_corpus(&config.data.corpus)?;
    let backends = build_backends(config)?;
    let build = build_indexes(
        &corpus,
        Some(backends.chat.as_ref()),
        &Lexicon::default(),
        backends.embedder.as_ref(),
        &config.chunking,
        &RetryPolicy::default(),
    )?;
    std::fs::create_dir_all(&config.kb.dir)?;
    persist_index(&build.doctor, &config.kb.doctor_index())?;
    persist_index(&build.pharmacist, &config.kb.pharmacist_index())?;
    let manifest = KbManifest {
        seed: config.seed,
        embedding_dim: config.embedding_dim,
        chunking: config.chunking,
        n_docs: corpus.len(),
        doctor_chunks: build.doctor.len(),
        pharmacist_chunks: build.pharmacist.len(),
        documents: build.assignments,
    };
    write_json(&config.kb.manifest(), &manifest)?;
    Ok(manifest)
}

/// Load the persisted index pair and check it against the config.
pub fn load_kb(config: &SystemConfig) -> Result<IndexPair, RunnerError> {
    let doctor = load_index(&config.kb.doctor_index())?;
    let pharmacist = load_index(&config.kb.pharmacist_index())?;
    for (index, role) in [(&doctor, Role::Doctor), (&pharmacist, Role::Pharmacist)] {
        if index.role_scope() != role {
            return Err(RunnerError::Invalid(format!(
                "index loaded for {role} is scoped to {}",
                index.role_scope()
            )));
        }
        if index.dim() != config.embedding_dim {
            return Err(RunnerError::Invalid(format!(
                "{role} index dimension {} does not match configured {}",
                index.dim(),
                config.embedding_dim
            )));
        }
    }
    Ok(IndexPair { doctor, pharmacist })
}

fn agent_context<'a>(
    config: &'a SystemConfig,
    backends: &'a Backends,
    indexes: &'a IndexPair,
) -> AgentContext<'a> {
    AgentContext {
        chat: backends.chat.as_ref(),
        embedder: backends.embedder.as_ref(),
        reranker: backends.reranker.as_ref(),
        indexes,
        retrieval: config.retrieval,
        reflection: config.reflection,
        departments: &config.departments,
        retry: RetryPolicy::default(),
    }
}

fn run_cases(
    ctx: &AgentContext,
    cases: &[PatientCase],
    modes: &ModeFlags,
    pool: &rayon::ThreadPool,
) -> Vec<ConsultationRecord> {
    let mut records: Vec<ConsultationRecord> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| run_consultation(ctx, case, modes))
            .collect()
    });
    records.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    records
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, RunnerError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunnerError::Invalid(format!("thread pool: {e}")))
}

fn make_report(
    cases: &[PatientCase],
    records: &[ConsultationRecord],
) -> Result<RunReport, RunnerError> {
    let scores = score_records(cases, records)?;
    Ok(RunReport {
        n_cases: records.len(),
        accuracy: aggregate(&scores)?,
        judge: None,
        specialization: specialization_overlap(records),
    })
}

/// One benchmark run's artifacts and where they were written.
#[derive(Debug)]
pub struct BenchArtifacts {
    pub label: String,
    pub records: Vec<ConsultationRecord>,
    pub report: RunReport,
    pub records_path: PathBuf,
    pub report_path: PathBuf,
}

/// Run every case under one mode pair and write records plus report.
pub fn bench(config: &SystemConfig, modes: &ModeFlags) -> Result<BenchArtifacts, RunnerError> {
    let cases = load_cases(&config.data.cases)?;
    let indexes = load_kb(config)?;
    let backends = build_backends(config)?;
    let ctx = agent_context(config, &backends, &indexes);
    let pool = build_pool(config.workers)?;
    let records = run_cases(&ctx, &cases, modes, &pool);
    let report = make_report(&cases, &records)?;

    std::fs::create_dir_all(&config.out_dir)?;
    let label = modes.label();
    let records_path = config.out_dir.join(format!("records-{label}.jsonl"));
    let report_path = config.out_dir.join(format!("report-{label}.json"));
    write_jsonl(&records_path, &records)?;
    write_json(&report_path, &report)?;
    Ok(BenchArtifacts {
        label,
        records,
        report,
        records_path,
        report_path,
    })
}

/// The ablation command's table plus per-mode artifacts.
#[derive(Debug)]
pub struct AblationArtifacts {
    pub rows: Vec<AblationRow>,
    pub table_path: PathBuf,
    pub runs: Vec<BenchArtifacts>,
}

/// Run the mode grid over the same cases and indexes. Fixing `doctor` or
/// `pharmacist` narrows the grid to the matching rows.
pub fn ablate(
    config: &SystemConfig,
    doctor: Option<AgentMode>,
    pharmacist: Option<AgentMode>,
) -> Result<AblationArtifacts, RunnerError> {
    let grid: Vec<ModeFlags> = ablation_grid()
        .into_iter()
        .filter(|m| doctor.is_none_or(|d| m.doctor == d))
        .filter(|m| pharmacist.is_none_or(|p| m.pharmacist == p))
        .collect();
    if grid.is_empty() {
        return Err(RunnerError::Invalid(
            "mode filter matches no grid row".into(),
        ));
    }

    let cases = load_cases(&config.data.cases)?;
    let indexes = load_kb(config)?;
    let backends = build_backends(config)?;
    let ctx = agent_context(config, &backends, &indexes);
    let pool = build_pool(config.workers)?;
    std::fs::create_dir_all(&config.out_dir)?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for modes in grid {
        let records = run_cases(&ctx, &cases, &modes, &pool);
        let report = make_report(&cases, &records)?;
        let label = modes.label();
        let records_path = config.out_dir.join(format!("records-{label}.jsonl"));
        let report_path = config.out_dir.join(format!("report-{label}.json"));
        write_jsonl(&records_path, &records)?;
        write_json(&report_path, &report)?;
        rows.push(AblationRow {
            label: label.clone(),
            modes,
            accuracy: report.accuracy.clone(),
        });
        runs.push(BenchArtifacts {
            label,
            records,
            report,
            records_path,
            report_path,
        });
    }
    let table_path = config.out_dir.join("ablation.json");
    write_json(&table_path, &rows)?;
    Ok(AblationArtifacts {
        rows,
        table_path,
        runs,
    })
}

/// Run one ad-hoc complaint through the full system and return its record.
/// The synthetic case carries no gold answers; this is a debugging path, not
/// a scored benchmark run.
pub fn consult(config: &SystemConfig, complaint: &str) -> Result<ConsultationRecord, RunnerError> {
    let complaint = complaint.trim();
    if complaint.is_empty() {
        return Err(RunnerError::Invalid("complaint text is empty".into()));
    }
    let case = PatientCase {
        case_id: "consult".into(),
        complaint: complaint.to_string(),
        gold_diagnosis: String::new(),
        gold_medication: String::new(),
        diagnosis_options: None,
        medication_options: None,
        department: None,
    };
    let indexes = load_kb(config)?;
    let backends = build_backends(config)?;
    let ctx = agent_context(config, &backends, &indexes);
    Ok(run_consultation(&ctx, &case, &ModeFlags::full()))
}

/// Judge the final evidence in a records file against the gold answers.
pub fn judge_run(
    config: &SystemConfig,
    records_path: Option<&Path>,
) -> Result<JudgeReport, RunnerError> {
    let default_path = config
        .out_dir
        .join(format!("records-{}.jsonl", ModeFlags::full().label()));
    let records_path = records_path.unwrap_or(&default_path);
    let records = load_records(records_path)?;
    let cases = load_cases(&config.data.cases)?;
    let backends = build_backends(config)?;
    let report = judge_records(backends.judge.as_ref(), &cases, &records)?;
    std::fs::create_dir_all(&config.out_dir)?;
    write_json(&config.out_dir.join("judge-report.json"), &report)?;
    Ok(report)
}

/// Generate a synthetic fixture plus a ready-to-run config for it. Returns
/// the config; its `config.toml` lands inside the directory.
pub fn gen_fixture(dir: &Path, spec: &FixtureSpec) -> Result<SystemConfig, RunnerError> {
    let fixture = generate_fixture(spec)?;
    fixture.write_to(dir)?;
    let mut config = SystemConfig::for_fixture_dir(dir);
    config.seed = spec.seed;
    config.embedding_dim = spec.embedding_dim;
    config.retrieval.top_k = spec.top_k;
    config.retrieval.top_n = spec.top_n;
    config.departments = Fixture::departments();
    config.validate()?;
    std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    Ok(config)
}

pub fn load_records(path: &Path) -> Result<Vec<ConsultationRecord>, RunnerError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ConsultationRecord = serde_json::from_str(line)
            .map_err(|e| RunnerError::Invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(RunnerError::Invalid(format!(
            "{}: no records",
            path.display()
        )));
    }
    Ok(records)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| RunnerError::Invalid(format!("serialize {}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunnerError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| RunnerError::Invalid(format!("serialize {}: {e}", path.display())))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
