//! Doctor agent: department routing, query planning, and the committed
//! differential diagnosis.

use super::{AgentContext, AgentError, Diagnosis, DiagnosticPlan, PromptRecord, RankedCondition};
use crate::dataset::{match_option, PatientCase};
use crate::llm::{complete, ChatRequest, SchemaPayload, SchemaTag};
use crate::retrieval::RetrievedDoc;
use crate::text::normalize_answer;

fn unexpected(stage: &'static str, tag: SchemaTag, got: SchemaTag) -> AgentError {
    AgentError::Llm {
        stage,
        source: crate::llm::LlmError::SchemaAfterRepair {
            tag,
            message: format!("unexpected payload {got:?}"),
        },
    }
}

/// Draft the diagnostic plan: a department from the configured list and the
/// initial retrieval queries. An off-list department is coerced to "unknown"
/// rather than failing the case; queries are capped at `q_max`.
pub fn plan(
    ctx: &AgentContext,
    case: &PatientCase,
    prompts: &mut Vec<PromptRecord>,
) -> Result<DiagnosticPlan, AgentError> {
    let system = "You are the attending physician opening a consultation. Route the case to a \
                  department and plan retrieval queries over a clinical knowledge base that \
                  cover the diagnostic picture: key symptoms, candidate conditions, and \
                  distinguishing criteria. Reply with JSON {\"department\": \"...\", \
                  \"queries\": [\"...\"], \"reasoning\": \"...\"}.";
    let user = format!(
        "Role: doctor\nPatient complaint: {}\nDepartments: {}\nPropose up to {} queries.",
        case.complaint,
        ctx.departments.join(", "),
        ctx.reflection.q_max,
    );
    let request = ChatRequest::new(SchemaTag::Plan, system, user);
    prompts.push(PromptRecord {
        tag: SchemaTag::Plan,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });
    let output = complete(ctx.chat, &request, &ctx.retry).map_err(|source| AgentError::Llm {
        stage: "plan",
        source,
    })?;
    let p = match output.payload {
        SchemaPayload::Plan(p) => p,
        other => return Err(unexpected("plan", SchemaTag::Plan, other.tag())),
    };

    let department = {
        let wanted = normalize_answer(&p.department);
        ctx.departments
            .iter()
            .find(|d| normalize_answer(d) == wanted)
            .cloned()
            .unwrap_or_else(|| {
                log::debug!(
                    "department {:?} not in configured list; using unknown",
                    p.department
                );
                "unknown".to_string()
            })
    };
    let mut queries = p.queries;
    if queries.len() > ctx.reflection.q_max {
        log::debug!("truncating {} planned queries to q_max", queries.len());
        queries.truncate(ctx.reflection.q_max);
    }
    Ok(DiagnosticPlan {
        department,
        queries,
        reasoning: p.reasoning,
    })
}

fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {o}", crate::dataset::option_letter(i)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn diagnosis_request(
    case: &PatientCase,
    department: &str,
    evidence: &[RetrievedDoc],
) -> ChatRequest {
    let system = "You are the attending physician. Commit to a ranked differential diagnosis \
                  based on the complaint and the retrieved evidence. Reply with JSON \
                  {\"ranked\": [{\"condition\": \"...\", \"rationale\": \"...\"}, ...]} \
                  listing at least three distinct conditions, most likely first.";
    let mut user = format!(
        "Role: doctor\nPatient complaint: {}\nDepartment: {department}\nEvidence:\n{}",
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
    if let Some(options) = &case.diagnosis_options {
        user.push_str(&format!(
            "\nAnswer options:\n{}\nThe first-ranked condition must be one of the options, \
             named by letter or by exact option text.",
            render_options(options)
        ));
    }
    ChatRequest::new(SchemaTag::Diagnosis, system, user)
}

/// Commit to the differential. For multiple-choice cases the primary
/// condition must resolve to an option; one corrective re-prompt restates the
/// options before the case is failed.
pub fn diagnose(
    ctx: &AgentContext,
    case: &PatientCase,
    department: &str,
    evidence: &[RetrievedDoc],
    prompts: &mut Vec<PromptRecord>,
) -> Result<Diagnosis, AgentError> {
    let request = diagnosis_request(case, department, evidence);
    prompts.push(PromptRecord {
        tag: SchemaTag::Diagnosis,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });

    let mut attempt = 0;
    let mut current = request;
    loop {
        let output =
            complete(ctx.chat, &current, &ctx.retry).map_err(|source| AgentError::Llm {
                stage: "diagnosis",
                source,
            })?;
        let p = match output.payload {
            SchemaPayload::Diagnosis(p) => p,
            other => return Err(unexpected("diagnosis", SchemaTag::Diagnosis, other.tag())),
        };
        let ranked: Vec<RankedCondition> = p
            .ranked
            .into_iter()
            .map(|e| RankedCondition {
                condition: e.condition,
                rationale: e.rationale,
            })
            .collect();
        let diagnosis = Diagnosis { ranked };

        let violation = case
            .diagnosis_options
            .as_ref()
            .filter(|options| match_option(options, diagnosis.primary()).is_none())
            .map(|_| diagnosis.primary().to_string());
        match violation {
            None => return Ok(diagnosis),
            Some(answer) if attempt == 0 => {
                attempt = 1;
                let options = case
                    .diagnosis_options
                    .as_ref()
                    .expect("violation implies options");
                current = ChatRequest::new(
                    SchemaTag::Diagnosis,
                    current.system_prompt.clone(),
                    format!(
                        "{}\n\nYour first-ranked condition {answer:?} is not among the options. \
                         Choose from:\n{}",
                        current.user_prompt,
                        render_options(options)
                    ),
                );
                prompts.push(PromptRecord {
                    tag: SchemaTag::Diagnosis,
                    system: current.system_prompt.clone(),
                    user: current.user_prompt.clone(),
                });
            }
            Some(answer) => {
                return Err(AgentError::OptionViolation {
                    stage: "diagnosis",
                    answer,
                });
            }
        }
    }
}
