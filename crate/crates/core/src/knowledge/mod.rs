//! Knowledge base: entries with single-parent ancestor links, hybrid
//! lexical/semantic recall, ancestor closure and re-ranked fine retrieval.

mod bm25;
mod entry;
mod store;

pub use bm25::{tokenize, Bm25Index, DEFAULT_B, DEFAULT_K1};
pub use entry::{export_jsonl, parse_jsonl, validate_entries, KnowledgeEntry, KnowledgeTriplet, Label};
pub use store::{FineOptions, KnowledgeStore, Phase, RetrievalHit, RetrievalResult};
