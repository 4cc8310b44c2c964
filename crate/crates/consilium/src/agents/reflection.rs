//! Confidence-gated retrieval. Each round searches every query, merges the
//! hits, and self-assesses; low confidence triggers query regeneration and
//! another round, up to the budget. The evidence that leaves the loop is the
//! best round's, not necessarily the last round's.

use super::{AgentContext, AgentError, ConfidenceReport, PromptRecord, ReflectionRound};
use crate::llm::{complete, ChatRequest, SchemaPayload, SchemaTag};
use crate::retrieval::{search, RetrievalQuery, RetrievalResult, RetrievedDoc};
use crate::types::Role;

/// What the loop hands back to the calling agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionOutcome {
    pub rounds: Vec<ReflectionRound>,
    /// Merged evidence of the best round: highest overall confidence, later
    /// round on ties. Naive mode has one round and this is its evidence.
    pub evidence: Vec<RetrievedDoc>,
    /// True when the loop ended because confidence cleared the threshold.
    pub confident: bool,
}

/// Merge per-query results into one ranking: dedup by chunk id keeping the
/// maximum rerank score, order by score descending then chunk id, and assign
/// fresh contiguous ranks.
pub fn merge_round(results: &[RetrievalResult]) -> Vec<RetrievedDoc> {
    let mut best: std::collections::BTreeMap<&str, &RetrievedDoc> = Default::default();
    for result in results {
        for doc in &result.docs {
            match best.get(doc.chunk_id.as_str()) {
                Some(held) if held.rerank_score >= doc.rerank_score => {}
                _ => {
                    best.insert(&doc.chunk_id, doc);
                }
            }
        }
    }
    let mut merged: Vec<RetrievedDoc> = best.into_values().cloned().collect();
    merged.sort_by(|a, b| {
        b.rerank_score
            .partial_cmp(&a.rerank_score)
            .expect("rerank scores are finite")
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    for (i, doc) in merged.iter_mut().enumerate() {
        doc.rank = i + 1;
    }
    merged
}

fn render_evidence(docs: &[RetrievedDoc]) -> String {
    if docs.is_empty() {
        return "(none)".to_string();
    }
    docs.iter()
        .map(|d| format!("[{}] {}", d.rank, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ask the agent to score its own evidence. Empty evidence short-circuits to
/// zero confidence without a backend call; there is nothing to assess.
pub fn assess_confidence(
    ctx: &AgentContext,
    role: Role,
    question: &str,
    queries: &[String],
    evidence: &[RetrievedDoc],
    round: u32,
    prompts: &mut Vec<PromptRecord>,
) -> Result<ConfidenceReport, AgentError> {
    if evidence.is_empty() {
        return Ok(ConfidenceReport::new(
            0.0,
            0.0,
            "no evidence retrieved".into(),
        ));
    }
    let system = "You audit evidence retrieved for a clinical question. Score sufficiency \
                  (does the evidence cover the information need?) and accuracy (is it on \
                  topic and trustworthy for this question?) as numbers in [0, 1]. Reply with \
                  JSON {\"sufficiency\": s, \"accuracy\": a, \"rationale\": \"...\"}.";
    let user =
        format!(
        "Role: {role}\nRetrieval round {round}\nQuestion: {question}\nQueries:\n{}\nEvidence:\n{}",
        queries.iter().map(|q| format!("- {q}")).collect::<Vec<_>>().join("\n"),
        render_evidence(evidence),
    );
    let request = ChatRequest::new(SchemaTag::Confidence, system, user);
    prompts.push(PromptRecord {
        tag: SchemaTag::Confidence,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });
    let output = complete(ctx.chat, &request, &ctx.retry).map_err(|source| AgentError::Llm {
        stage: "confidence",
        source,
    })?;
    match output.payload {
        SchemaPayload::Confidence(p) => Ok(ConfidenceReport::new(
            p.sufficiency as f32,
            p.accuracy as f32,
            p.rationale,
        )),
        other => Err(AgentError::Llm {
            stage: "confidence",
            source: crate::llm::LlmError::SchemaAfterRepair {
                tag: SchemaTag::Confidence,
                message: format!("unexpected payload {:?}", other.tag()),
            },
        }),
    }
}

fn regenerate_queries(
    ctx: &AgentContext,
    role: Role,
    question: &str,
    previous: &[String],
    assessment: &ConfidenceReport,
    next_round: u32,
    prompts: &mut Vec<PromptRecord>,
) -> Result<Vec<String>, AgentError> {
    let system = "You refine knowledge base queries after an unsatisfying retrieval round. \
                  Propose sharper or broader queries that target what the assessment found \
                  missing. Reply with JSON {\"queries\": [\"...\"]}.";
    let user =
        format!(
        "Role: {role}\nRetrieval round {next_round}\nQuestion: {question}\nPrevious queries:\n{}\n\
         Assessment (sufficiency {:.2}, accuracy {:.2}): {}\nPropose up to {} queries.",
        previous.iter().map(|q| format!("- {q}")).collect::<Vec<_>>().join("\n"),
        assessment.sufficiency,
        assessment.accuracy,
        assessment.rationale,
        ctx.reflection.q_max,
    );
    let request = ChatRequest::new(SchemaTag::Queries, system, user);
    prompts.push(PromptRecord {
        tag: SchemaTag::Queries,
        system: request.system_prompt.clone(),
        user: request.user_prompt.clone(),
    });
    let output = complete(ctx.chat, &request, &ctx.retry).map_err(|source| AgentError::Llm {
        stage: "query regeneration",
        source,
    })?;
    match output.payload {
        SchemaPayload::Queries(p) => {
            let mut queries = p.queries;
            if queries.len() > ctx.reflection.q_max {
                log::debug!("truncating {} regenerated queries to q_max", queries.len());
                queries.truncate(ctx.reflection.q_max);
            }
            Ok(queries)
        }
        other => Err(AgentError::Llm {
            stage: "query regeneration",
            source: crate::llm::LlmError::SchemaAfterRepair {
                tag: SchemaTag::Queries,
                message: format!("unexpected payload {:?}", other.tag()),
            },
        }),
    }
}

fn run_queries(
    ctx: &AgentContext,
    role: Role,
    queries: &[String],
    round: u32,
    stage: &'static str,
) -> Result<Vec<RetrievalResult>, AgentError> {
    queries
        .iter()
        .map(|text| {
            let query = RetrievalQuery {
                text: text.clone(),
                role,
                round,
            };
            search(
                ctx.indexes,
                ctx.embedder,
                ctx.reranker,
                &query,
                &ctx.retrieval,
                &ctx.retry,
            )
            .map_err(|source| AgentError::Retrieval { stage, source })
        })
        .collect()
}

fn pick_best(rounds: &[ReflectionRound]) -> Vec<RetrievedDoc> {
    let mut best_idx = 0;
    let mut best_overall = f32::NEG_INFINITY;
    for (i, round) in rounds.iter().enumerate() {
        let overall = round
            .confidence
            .as_ref()
            .map_or(f32::NEG_INFINITY, |c| c.overall);
        // >= prefers the later round on ties
        if overall >= best_overall {
            best_overall = overall;
            best_idx = i;
        }
    }
    rounds[best_idx].merged.clone()
}

/// The reflection loop. `initial_queries` come from the agent's plan; they
/// are capped at `q_max` here so every caller gets the same behavior.
pub fn run_retrieval_with_reflection(
    ctx: &AgentContext,
    role: Role,
    question: &str,
    initial_queries: &[String],
    stage: &'static str,
    prompts: &mut Vec<PromptRecord>,
) -> Result<ReflectionOutcome, AgentError> {
    ctx.reflection.validate()?;
    let mut queries: Vec<String> = initial_queries
        .iter()
        .take(ctx.reflection.q_max)
        .cloned()
        .collect();
    let mut rounds: Vec<ReflectionRound> = Vec::new();
    let mut confident = false;
    let mut reused_previous = false;

    for round in 0.. {
        let results = run_queries(ctx, role, &queries, round, stage)?;
        let merged = merge_round(&results);
        let confidence = assess_confidence(ctx, role, question, &queries, &merged, round, prompts)?;
        let overall = confidence.overall;
        rounds.push(ReflectionRound {
            round,
            queries: queries.clone(),
            results,
            merged,
            confidence: Some(confidence),
        });

        if overall >= ctx.reflection.tau {
            confident = true;
            break;
        }
        if round >= ctx.reflection.r_max {
            break;
        }
        let assessment = rounds
            .last()
            .and_then(|r| r.confidence.clone())
            .expect("round just pushed has confidence");
        let regenerated = regenerate_queries(
            ctx,
            role,
            question,
            &queries,
            &assessment,
            round + 1,
            prompts,
        )?;
        if regenerated.is_empty() {
            if reused_previous {
                log::debug!("query regeneration empty twice; stopping reflection");
                break;
            }
            log::debug!("query regeneration empty; reusing previous queries once");
            reused_previous = true;
            // queries stay as they are for one more round
        } else {
            queries = regenerated;
        }
    }

    let evidence = pick_best(&rounds);
    Ok(ReflectionOutcome {
        rounds,
        evidence,
        confident,
    })
}

/// Single-shot retrieval for ablation runs: the complaint text is the one and
/// only query, and no confidence assessment happens.
pub fn naive_retrieval(
    ctx: &AgentContext,
    role: Role,
    complaint: &str,
    stage: &'static str,
) -> Result<ReflectionOutcome, AgentError> {
    let queries = vec![complaint.to_string()];
    let results = run_queries(ctx, role, &queries, 0, stage)?;
    let merged = merge_round(&results);
    let evidence = merged.clone();
    let rounds = vec![ReflectionRound {
        round: 0,
        queries,
        results,
        merged,
        confidence: None,
    }];
    Ok(ReflectionOutcome {
        rounds,
        evidence,
        confident: false,
    })
}
