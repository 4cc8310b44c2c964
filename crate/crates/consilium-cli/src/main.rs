//! consilium command line.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures
//! (missing inputs, bad config, backend trouble).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use consilium::agents::{
    AgentMode, ConsultationRecord, ConsultationStatus, ModeFlags, ReflectionRound,
};
use consilium::config::SystemConfig;
use consilium::dataset::FixtureSpec;
use consilium::runner::{self, RunnerError};

#[derive(Parser)]
#[command(
    name = "consilium",
    version,
    about = "Dual-agent retrieval benchmark runner"
)]
struct Cli {
    /// TOML config path; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Force scriptless mock backends regardless of the config.
    #[arg(long, global = true)]
    mock: bool,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist both role indexes from the corpus.
    BuildKb,
    /// Run every case and write records plus an aggregate report.
    Bench {
        #[arg(long, default_value = "reflective", value_parser = parse_mode)]
        doctor: AgentMode,
        #[arg(long, default_value = "reflective", value_parser = parse_mode)]
        pharmacist: AgentMode,
    },
    /// Run the four-way mode grid and write the comparison table.
    Ablate {
        /// Restrict the grid to one doctor mode.
        #[arg(long, value_parser = parse_mode)]
        doctor: Option<AgentMode>,
        /// Restrict the grid to one pharmacist mode.
        #[arg(long, value_parser = parse_mode)]
        pharmacist: Option<AgentMode>,
    },
    /// Run one ad-hoc complaint through the full system and print the trace.
    Consult {
        /// Chief complaint text.
        complaint: String,
        /// Also write the raw record as pretty JSON to this path.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Judge recorded evidence against the gold answers.
    Judge {
        /// Records file; defaults to the full-mode bench output.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Generate a synthetic benchmark fixture with a ready config.
    GenFixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Corrupt the scripted medication answer for the first N cases.
        #[arg(long, default_value_t = 0)]
        corrupt: usize,
    },
}

fn parse_mode(s: &str) -> Result<AgentMode, String> {
    match s {
        "reflective" => Ok(AgentMode::Reflective),
        "naive" => Ok(AgentMode::Naive),
        other => Err(format!("{other:?} is not a mode; use reflective or naive")),
    }
}

fn print_rounds(rounds: &[ReflectionRound]) {
    for round in rounds {
        let confidence = match &round.confidence {
            Some(c) => format!("confidence {:.2} ({})", c.overall, c.rationale),
            None => "no confidence assessment".into(),
        };
        println!(
            "round {}: {} queries, {} docs, {}",
            round.round,
            round.queries.len(),
            round.merged.len(),
            confidence
        );
        for query in &round.queries {
            println!("  query: {query}");
        }
        for doc in &round.merged {
            println!(
                "  doc {} rerank {:.3} coarse {:.3} [{}]",
                doc.rank, doc.rerank_score, doc.coarse_score, doc.chunk_id
            );
        }
    }
}

fn print_trace(complaint: &str, record: &ConsultationRecord) {
    println!("== complaint ==\n{complaint}");

    println!("\n== doctor plan ==");
    match &record.doctor.plan {
        Some(plan) => {
            println!("department: {}", plan.department);
            println!("reasoning: {}", plan.reasoning);
            for query in &plan.queries {
                println!("  query: {query}");
            }
        }
        None => println!("none"),
    }

    println!("\n== doctor retrieval ==");
    print_rounds(&record.doctor.rounds);

    println!("\n== diagnosis ==");
    match &record.doctor.diagnosis {
        Some(diagnosis) => {
            for (i, entry) in diagnosis.ranked.iter().enumerate() {
                println!("{}. {} ({})", i + 1, entry.condition, entry.rationale);
            }
        }
        None => println!("none"),
    }

    println!("\n== handoff ==");
    match &record.pharmacist.adoption {
        Some(adoption) => {
            println!(
                "adopt diagnosis: {} ({})",
                adoption.adopt, adoption.justification
            )
        }
        None => println!("none"),
    }

    println!("\n== pharmacist retrieval ==");
    print_rounds(&record.pharmacist.rounds);

    println!("\n== medication ==");
    match &record.pharmacist.medication {
        Some(plan) => {
            for drug in &plan.recommended {
                println!("recommend: {} ({})", drug.drug, drug.rationale);
            }
            if let Some(letter) = &plan.selected_option {
                println!("selected option: {letter}");
            }
        }
        None => println!("none"),
    }

    println!("\n== status ==");
    match &record.status {
        ConsultationStatus::Completed => println!("completed in {} ms", record.elapsed_ms),
        ConsultationStatus::Failed { stage, error } => println!("failed at {stage}: {error}"),
    }
}

/// Restore default SIGPIPE handling so piping into `head` ends the process
/// quietly instead of panicking on a closed stdout.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    let mut config = match &cli.config {
        Some(path) => SystemConfig::load(path)?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if cli.mock {
        config.backends = Default::default();
    }
    config.validate()?;

    match cli.command {
        Command::BuildKb => {
            let manifest = runner::build_kb(&config)?;
            println!(
                "built {} docs into {} doctor and {} pharmacist chunks under {}",
                manifest.n_docs,
                manifest.doctor_chunks,
                manifest.pharmacist_chunks,
                config.kb.dir.display()
            );
        }
        Command::Bench { doctor, pharmacist } => {
            let artifacts = runner::bench(&config, &ModeFlags { doctor, pharmacist })?;
            let a = &artifacts.report.accuracy;
            println!(
                "{}: top1 {:.3} top3 {:.3} drug {:.3} failed {} of {}",
                artifacts.label, a.top1_acc, a.top3_acc, a.drug_acc, a.failed, a.n_cases
            );
            println!("records: {}", artifacts.records_path.display());
            println!("report:  {}", artifacts.report_path.display());
        }
        Command::Ablate { doctor, pharmacist } => {
            let artifacts = runner::ablate(&config, doctor, pharmacist)?;
            for row in &artifacts.rows {
                let a = &row.accuracy;
                println!(
                    "{:<44} top1 {:.3} top3 {:.3} drug {:.3}",
                    row.label, a.top1_acc, a.top3_acc, a.drug_acc
                );
            }
            println!("table: {}", artifacts.table_path.display());
        }
        Command::Consult { complaint, record } => {
            let trace = runner::consult(&config, &complaint)?;
            print_trace(&complaint, &trace);
            if let Some(path) = record {
                let text = serde_json::to_string_pretty(&trace)
                    .map_err(|e| RunnerError::Invalid(e.to_string()))?;
                std::fs::write(&path, text + "\n")?;
                println!("\nrecord: {}", path.display());
            }
        }
        Command::Judge { records } => {
            let report = runner::judge_run(&config, records.as_deref())?;
            println!(
                "judged {} cases: doctor relevance {:.2} contribution {:.2}, \
                 pharmacist relevance {:.2} contribution {:.2}",
                report.n_cases,
                report.doctor.relevance,
                report.doctor.contribution,
                report.pharmacist.relevance,
                report.pharmacist.contribution
            );
        }
        Command::GenFixture {
            dir,
            cases,
            corrupt,
        } => {
            let spec = FixtureSpec {
                n_cases: cases,
                seed: config.seed,
                embedding_dim: config.embedding_dim,
                top_k: config.retrieval.top_k,
                top_n: config.retrieval.top_n,
                corrupted_medication_cases: (0..corrupt).collect(),
                ..Default::default()
            };
            runner::gen_fixture(&dir, &spec)?;
            println!("fixture with {cases} cases written to {}", dir.display());
        }
    }
    Ok(())
}
