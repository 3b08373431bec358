//! Candidate table selection.
//!
//! Offline, every table is profiled into an embedding of its rendered name,
//! columns and comments, with heat normalized over the batch. Online, query
//! keywords drive a coarse embedding recall bounded by a size budget, and the
//! survivors are re-ranked by `Sim + alpha * Embed + beta * Heat`.

mod similarity;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{cosine, ChatRequest, EmbeddingVector, Gateway};
use crate::reply::parse_json;
use crate::{Error, Result};

pub use similarity::TrigramTfIdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type", default)]
    pub column_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat: Option<f64>,
    pub columns: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// Schema file contents: `{"tables": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSource {
    pub tables: Vec<TableSpec>,
}

impl SchemaSource {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Copies heat and comments from `overlay` onto same-named tables and columns.
    pub fn annotate(&mut self, overlay: &SchemaSource) {
        for t in &mut self.tables {
            let Some(o) = overlay.table(&t.name) else { continue };
            t.heat = o.heat.or(t.heat);
            if t.tags.is_empty() {
                t.tags = o.tags.clone();
            }
            for c in &mut t.columns {
                if let Some(oc) = o.columns.iter().find(|x| x.name.eq_ignore_ascii_case(&c.name)) {
                    c.comment = oc.comment.clone().or(c.comment.take());
                }
            }
        }
    }

    /// Keeps only the named tables.
    pub fn restricted_to(&self, names: &[String]) -> SchemaSource {
        SchemaSource {
            tables: self
                .tables
                .iter()
                .filter(|t| names.iter().any(|n| n.eq_ignore_ascii_case(&t.name)))
                .cloned()
                .collect(),
        }
    }

    /// Prompt listing: one line per table with typed, commented columns.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| match &c.comment {
                    Some(cm) => format!("{} {} -- {}", c.name, c.column_type, cm),
                    None => format!("{} {}", c.name, c.column_type),
                })
                .collect();
            out.push_str(&format!("TABLE {} ({})\n", t.name, cols.join(", ")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableProfile {
    pub table_name: String,
    pub columns: Vec<ColumnSpec>,
    pub embedding: EmbeddingVector,
    /// Normalized to [0, 1] over the profiled batch.
    pub heat: f64,
    pub tags: Vec<String>,
}

impl TableProfile {
    pub fn field_count(&self) -> usize {
        self.columns.len()
    }
}

/// `name | col names | comments`, the text a table is embedded from.
pub fn render_table(spec: &TableSpec) -> String {
    let names: Vec<&str> = spec.columns.iter().map(|c| c.name.as_str()).collect();
    let comments: Vec<&str> = spec.columns.iter().filter_map(|c| c.comment.as_deref()).collect();
    format!("{} | {} | {}", spec.name, names.join(" "), comments.join(" "))
}

/// Min-max normalization; a constant batch maps to 0.5.
pub fn normalize_heat(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() {
        return Vec::new();
    }
    if hi - lo <= 0.0 {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|h| (h - lo) / (hi - lo)).collect()
}

pub fn profile_tables(schema: &SchemaSource, gateway: &Gateway) -> Result<Vec<TableProfile>> {
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for t in &schema.tables {
        if !seen.insert(t.name.to_lowercase()) {
            problems.push(format!("duplicate table `{}`", t.name));
        }
        if t.columns.is_empty() {
            problems.push(format!("table `{}` has no columns", t.name));
        }
        if let Some(h) = t.heat {
            if !h.is_finite() || h < 0.0 {
                problems.push(format!("table `{}` has invalid heat {h}", t.name));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Ingest(problems.join("; ")));
    }
    if schema.tables.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = schema.tables.iter().map(render_table).collect();
    let embeddings = gateway.embed(&texts)?;
    let heats = normalize_heat(&schema.tables.iter().map(|t| t.heat.unwrap_or(0.0)).collect::<Vec<_>>());
    Ok(schema
        .tables
        .iter()
        .zip(embeddings)
        .zip(heats)
        .map(|((t, embedding), heat)| TableProfile {
            table_name: t.name.clone(),
            columns: t.columns.clone(),
            embedding,
            heat,
            tags: t.tags.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringParams {
    pub rerank_alpha: f64,
    pub rerank_beta: f64,
    pub coarse_cap: usize,
    /// Base budget; the effective budget is `size_budget_k * max(1, K)`.
    pub size_budget_k: usize,
    pub candidate_n: usize,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self { rerank_alpha: 0.5, rerank_beta: 0.2, coarse_cap: 100, size_budget_k: 2000, candidate_n: 5 }
    }
}

impl ScoringParams {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.rerank_alpha >= 0.0 && self.rerank_alpha.is_finite()) {
            p.push(format!("{prefix}.rerank_alpha: must be a finite value >= 0"));
        }
        if !(self.rerank_beta >= 0.0 && self.rerank_beta.is_finite()) {
            p.push(format!("{prefix}.rerank_beta: must be a finite value >= 0"));
        }
        if self.candidate_n == 0 {
            p.push(format!("{prefix}.candidate_n: must be positive"));
        }
        if self.size_budget_k == 0 {
            p.push(format!("{prefix}.size_budget_k: must be positive"));
        }
        if self.coarse_cap < self.candidate_n {
            p.push(format!("{prefix}.coarse_cap: must be >= candidate_n"));
        }
        p
    }

    pub fn budget(&self, keyword_count: usize) -> usize {
        self.size_budget_k.saturating_mul(keyword_count.max(1))
    }
}

/// `Sim + alpha * Embed + beta * Heat`.
pub fn rerank_score(sim: f64, embed: f64, heat: f64, params: &ScoringParams) -> f64 {
    sim + params.rerank_alpha * embed + params.rerank_beta * heat
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub keywords: Vec<String>,
    /// Set when the keywords came from the lexical fallback.
    #[serde(default)]
    pub degraded: bool,
}

impl KeywordSet {
    /// Trims, drops empties and deduplicates case-insensitively, keeping first occurrences.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let keywords = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_string())
            .filter(|w| !w.is_empty() && seen.insert(w.to_lowercase()))
            .collect();
        Self { keywords, degraded: false }
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "are", "as", "at", "be", "by", "can", "did", "do", "does", "each", "for", "from",
    "give", "has", "have", "how", "i", "in", "is", "it", "list", "me", "many", "much", "of", "on", "or", "please",
    "show", "tell", "that", "the", "their", "there", "this", "to", "was", "were", "what", "when", "where", "which",
    "who", "with", "what's",
];

/// Lexical keywords: lowercase alphanumeric tokens minus stopwords.
pub fn fallback_keywords(query: &str) -> KeywordSet {
    let lowered = query.to_lowercase();
    let tokens: Vec<&str> =
        lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty() && !STOPWORDS.contains(t)).collect();
    let mut set = KeywordSet::new(&tokens);
    if set.is_empty() {
        set = KeywordSet::new([query]);
    }
    set.degraded = true;
    set
}

pub fn extract_keywords(query: &str, gateway: &Gateway) -> Result<KeywordSet> {
    if query.trim().is_empty() {
        return Err(Error::Validation("query must not be empty".into()));
    }
    let req = ChatRequest::new("keyword_extract").system(crate::prompts::KEYWORDS).user(query);
    let parsed = gateway
        .chat_text(&req)
        .and_then(|raw| parse_json::<Vec<String>>(&raw).ok_or_else(|| Error::reply_parse("keywords", raw)));
    match parsed {
        Ok(words) => {
            let set = KeywordSet::new(words);
            if set.is_empty() {
                tracing::warn!("keyword reply was empty; using lexical fallback");
                Ok(fallback_keywords(query))
            } else {
                Ok(set)
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, "keyword extraction failed; using lexical fallback");
            Ok(fallback_keywords(query))
        }
    }
}

/// A table surviving the coarse stage, with its max per-keyword cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseHit {
    pub index: usize,
    pub embed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTable {
    pub table_name: String,
    pub sim: f64,
    pub embed: f64,
    pub heat: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub keywords: KeywordSet,
    pub coarse_count: usize,
    pub candidates: Vec<ScoredTable>,
}

impl Selection {
    pub fn table_names(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.table_name.clone()).collect()
    }
}

/// Immutable profiles plus the trigram TF-IDF model over their columns.
#[derive(Debug, Clone)]
pub struct TableIndex {
    profiles: Vec<TableProfile>,
    tfidf: TrigramTfIdf,
}

fn by_score_then_name(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

impl TableIndex {
    pub fn new(profiles: Vec<TableProfile>) -> Self {
        let docs = profiles
            .iter()
            .flat_map(|p| p.columns.iter().flat_map(|c| std::iter::once(c.name.as_str()).chain(c.comment.as_deref())));
        let tfidf = TrigramTfIdf::fit(docs);
        Self { profiles, tfidf }
    }

    pub fn build(schema: &SchemaSource, gateway: &Gateway) -> Result<Self> {
        Ok(Self::new(profile_tables(schema, gateway)?))
    }

    pub fn profiles(&self) -> &[TableProfile] {
        &self.profiles
    }

    pub fn profile(&self, name: &str) -> Option<&TableProfile> {
        self.profiles.iter().find(|p| p.table_name.eq_ignore_ascii_case(name))
    }

    pub fn tfidf(&self) -> &TrigramTfIdf {
        &self.tfidf
    }

    /// `max(sim(k, name), sim(k, comment))` for one column.
    pub fn column_similarity(&self, keyword: &str, column: &ColumnSpec) -> f64 {
        let by_name = self.tfidf.similarity(keyword, &column.name);
        let by_comment = column.comment.as_deref().map_or(0.0, |c| self.tfidf.similarity(keyword, c));
        by_name.max(by_comment)
    }

    /// Sum over keywords of the best column similarity.
    pub fn token_similarity(&self, keywords: &[String], table: &TableProfile) -> f64 {
        keywords.iter().map(|k| table.columns.iter().map(|c| self.column_similarity(k, c)).fold(0.0, f64::max)).sum()
    }

    /// Per-keyword top-`coarse_cap` cosine recall, unioned, capped, then size-filtered.
    pub fn coarse_rank(
        &self,
        keyword_embeddings: &[EmbeddingVector],
        params: &ScoringParams,
        tags: &[String],
    ) -> Result<Vec<CoarseHit>> {
        let eligible: Vec<usize> = (0..self.profiles.len())
            .filter(|&i| tags.is_empty() || self.profiles[i].tags.iter().any(|t| tags.contains(t)))
            .collect();
        let mut best: HashMap<usize, f64> = HashMap::new();
        for kw in keyword_embeddings {
            let mut scored = Vec::with_capacity(eligible.len());
            for &i in &eligible {
                scored.push((i, cosine(kw, &self.profiles[i].embedding)?));
            }
            scored.sort_by(|a, b| {
                by_score_then_name((a.1, &self.profiles[a.0].table_name), (b.1, &self.profiles[b.0].table_name))
            });
            for (i, s) in scored.into_iter().take(params.coarse_cap) {
                let slot = best.entry(i).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(s);
            }
        }
        // a table's Embed is its max cosine over every keyword, not only the lists it made
        for (&i, s) in best.iter_mut() {
            for kw in keyword_embeddings {
                *s = s.max(cosine(kw, &self.profiles[i].embedding)?);
            }
        }
        let mut union: Vec<CoarseHit> = best.into_iter().map(|(index, embed)| CoarseHit { index, embed }).collect();
        union.sort_by(|a, b| {
            by_score_then_name(
                (a.embed, &self.profiles[a.index].table_name),
                (b.embed, &self.profiles[b.index].table_name),
            )
        });
        union.truncate(params.coarse_cap);

        let budget = params.budget(keyword_embeddings.len());
        let (mut fields, mut kept) = (0usize, Vec::new());
        for hit in union {
            let f = self.profiles[hit.index].field_count();
            if (fields + f) * (kept.len() + 1) <= budget {
                fields += f;
                kept.push(hit);
            }
        }
        Ok(kept)
    }

    /// Scores coarse survivors and returns the top `candidate_n`.
    pub fn rerank(&self, keywords: &[String], coarse: &[CoarseHit], params: &ScoringParams) -> Vec<ScoredTable> {
        let mut scored: Vec<ScoredTable> = coarse
            .iter()
            .map(|h| {
                let p = &self.profiles[h.index];
                let sim = self.token_similarity(keywords, p);
                ScoredTable {
                    table_name: p.table_name.clone(),
                    sim,
                    embed: h.embed,
                    heat: p.heat,
                    score: rerank_score(sim, h.embed, p.heat, params),
                }
            })
            .collect();
        scored.sort_by(|a, b| by_score_then_name((a.score, &a.table_name), (b.score, &b.table_name)));
        scored.truncate(params.candidate_n);
        scored
    }

    /// Selection for already-extracted keywords.
    pub fn select_with_keywords(
        &self,
        keywords: KeywordSet,
        params: &ScoringParams,
        gateway: &Gateway,
        tags: &[String],
    ) -> Result<Selection> {
        if keywords.is_empty() || self.profiles.is_empty() {
            return Err(Error::NoCandidateTables);
        }
        let embeddings = gateway.embed(&keywords.keywords)?;
        let coarse = self.coarse_rank(&embeddings, params, tags)?;
        if coarse.is_empty() {
            return Err(Error::NoCandidateTables);
        }
        let candidates = self.rerank(&keywords.keywords, &coarse, params);
        Ok(Selection { coarse_count: coarse.len(), keywords, candidates })
    }

    pub fn select_tables(
        &self,
        query: &str,
        params: &ScoringParams,
        gateway: &Gateway,
        tags: &[String],
    ) -> Result<Selection> {
        let keywords = extract_keywords(query, gateway)?;
        self.select_with_keywords(keywords, params, gateway, tags)
    }
}
