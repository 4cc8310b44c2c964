//! Confidence-aware dual-agent retrieval engine for clinical QA benchmarks.
//!
//! The pipeline pairs a doctor agent (diagnosis) with a pharmacist agent
//! (medication) over role-scoped vector knowledge bases. Each agent runs the
//! same loop: plan, generate queries, retrieve, reflect on retrieval
//! confidence, answer. Everything is offline-testable through deterministic
//! mock backends.

pub mod agents;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod retrieval;
pub mod runner;
pub mod text;
pub mod types;
