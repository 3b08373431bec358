//! Conversational business-intelligence engine.
//!
//! The crate turns multi-round natural-language dialogue into validated SQL,
//! executes it against an embedded SQLite database and optionally produces
//! insight reports. Every model call goes through [`gateway::Gateway`], which
//! has a scripted stub backend so each stage runs offline and reproducibly.
//!
//! Module map:
//! - [`gateway`]: chat, embedding and re-ranking providers (HTTP or stub).
//! - [`knowledge`]: knowledge entries with ancestor links, hybrid BM25 and
//!   embedding retrieval, ancestor closure.
//! - [`dialogue`]: integrity assessment, history completion, intent
//!   classification and clarification.
//! - [`tables`]: table profiling, keyword extraction and table ranking.
//! - [`sqlgen`]: strategy selection, semantic intermediate representation,
//!   SQL generation and validation.
//! - [`pipeline`]: training-data preparation workflow.
//! - [`insight`]: planner / data preparation / tool execution loop.
//! - [`eval`]: EX, VES, UEX and Recall@K.
//! - [`engine`]: configuration and per-message orchestration.
//! - [`fuzzing`]: byte-level entry points for the fuzz targets.

pub mod db;
pub mod dialogue;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fuzzing;
pub mod gateway;
pub mod insight;
pub mod knowledge;
pub mod pipeline;
pub mod prompts;
pub mod reply;
pub mod sqlgen;
pub mod tables;

pub use error::{Error, Result};
