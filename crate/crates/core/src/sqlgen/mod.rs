//! SQL generation.
//!
//! The strategy is chosen from labeled-data volume and domain similarity:
//! one-step routes the question to a fine-tuned endpoint, two-step first
//! rewrites it into a semantic intermediate representation (SIR) and then
//! asks the chat model for SQL. Every statement returned to a caller has
//! passed [`validate_sql`] against the candidate tables.

mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::gateway::{cosine, cosine_slices, mean, ChatRequest, Gateway};
use crate::reply::{parse_json, strip_fence};
use crate::tables::SchemaSource;
use crate::{Error, Result};

pub use validate::{parse_single_query, validate_sql, SqlCheck};

/// Thresholds of the strategy rule. `n_threshold` bounds labeled-pair count,
/// `s_threshold` bounds domain similarity; both comparisons are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyThresholds {
    pub n_threshold: u64,
    pub s_threshold: f64,
}

impl Default for StrategyThresholds {
    fn default() -> Self {
        Self { n_threshold: 500, s_threshold: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OneStep,
    TwoStep,
}

pub fn select_strategy(n_labeled: u64, s_domain: f64, t: &StrategyThresholds) -> Strategy {
    if n_labeled >= t.n_threshold && s_domain >= t.s_threshold {
        Strategy::OneStep
    } else {
        Strategy::TwoStep
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Cosine between the mean keyword embeddings of two domains.
pub fn domain_similarity(target: &DomainProfile, source: &DomainProfile, gateway: &Gateway) -> Result<f64> {
    let centroid = |d: &DomainProfile| -> Result<Vec<f64>> {
        if d.keywords.is_empty() {
            return Err(Error::Validation(format!("domain `{}` has no keywords", d.name)));
        }
        let vs = gateway.embed(&d.keywords)?;
        Ok(mean(&vs).unwrap_or_default())
    };
    Ok(cosine_slices(&centroid(target)?, &centroid(source)?))
}

fn stringify_components<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, String>, D::Error> {
    let raw: BTreeMap<String, serde_json::Value> = BTreeMap::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => (k, s),
            other => (k, other.to_string()),
        })
        .collect())
}

/// Semantic intermediate representation of a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sir {
    #[serde(rename = "Key Components", deserialize_with = "stringify_components")]
    pub key_components: BTreeMap<String, String>,
    #[serde(rename = "Knowledge Mapping", default)]
    pub knowledge_mapping: Vec<String>,
    #[serde(rename = "Query Understanding", default)]
    pub query_understanding: String,
    #[serde(rename = "Rewritten Query")]
    pub rewritten_query: String,
}

impl Sir {
    /// `vocabulary` holds schema identifiers and mapped knowledge terms.
    pub fn check(&self, vocabulary: &[String]) -> std::result::Result<(), String> {
        if self.rewritten_query.trim().is_empty() {
            return Err("\"Rewritten Query\" is empty".into());
        }
        if self.key_components.is_empty() {
            return Err("\"Key Components\" is empty".into());
        }
        let text = self.rewritten_query.to_lowercase();
        if !vocabulary.is_empty() && !vocabulary.iter().any(|v| !v.is_empty() && text.contains(&v.to_lowercase())) {
            return Err("\"Rewritten Query\" names no schema field or known term".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub sql: String,
}

/// The `k` demonstrations whose questions embed closest to `query`.
pub fn top_demonstrations(
    query: &str,
    pool: &[Demonstration],
    k: usize,
    gateway: &Gateway,
) -> Result<Vec<Demonstration>> {
    if pool.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let q = gateway.embed_one(query)?;
    let vs = gateway.embed(&pool.iter().map(|d| d.question.clone()).collect::<Vec<_>>())?;
    let mut scored = Vec::with_capacity(pool.len());
    for (i, v) in vs.iter().enumerate() {
        scored.push((i, cosine(&q, v)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, _)| pool[i].clone()).collect())
}

fn render_demos(demos: &[Demonstration]) -> String {
    demos.iter().map(|d| format!("Q: {}\nSQL: {}\n", d.question, d.sql)).collect()
}

/// Everything generation needs besides the question.
#[derive(Debug, Clone, Default)]
pub struct SqlContext {
    /// Schema restricted to the selected candidate tables.
    pub schema: SchemaSource,
    /// Rendered knowledge hits.
    pub knowledge: Vec<String>,
    pub demonstrations: Vec<Demonstration>,
    /// Terms the SIR rewrite must mention one of; empty disables the check.
    pub vocabulary: Vec<String>,
}

impl SqlContext {
    pub fn new(schema: SchemaSource) -> Self {
        let mut vocabulary = Vec::new();
        for t in &schema.tables {
            vocabulary.push(t.name.clone());
            vocabulary.extend(t.columns.iter().map(|c| c.name.clone()));
        }
        Self { schema, knowledge: Vec::new(), demonstrations: Vec::new(), vocabulary }
    }
}

pub fn build_sir(query: &str, ctx: &SqlContext, gateway: &Gateway) -> Result<Sir> {
    let system = format!(
        "{}\nField descriptions:\n{}\nExamples:\n{}",
        crate::prompts::SIR,
        ctx.knowledge.join("\n"),
        render_demos(&ctx.demonstrations)
    );
    let attempt = |raw: &str| -> std::result::Result<Sir, String> {
        let sir: Sir = parse_json(raw).ok_or("reply is not a JSON object with the four required keys")?;
        sir.check(&ctx.vocabulary)?;
        Ok(sir)
    };
    let raw = gateway.chat_text(&ChatRequest::new("sir_build").system(system.clone()).user(query))?;
    let problem = match attempt(&raw) {
        Ok(s) => return Ok(s),
        Err(p) => p,
    };
    tracing::debug!(%problem, "SIR reply rejected; retrying once");
    let repair = ChatRequest::new("sir_repair")
        .system(system)
        .user(query)
        .assistant(raw)
        .user(format!("{problem}. Reply again with valid JSON for: {query}"));
    let raw = gateway.chat_text(&repair)?;
    attempt(&raw).map_err(|_| Error::reply_parse("SIR", raw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSql {
    pub sql_text: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sir: Option<Sir>,
    pub tables_used: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Strips a code fence, surrounding space and one trailing semicolon.
pub fn clean_sql(raw: &str) -> String {
    let t = strip_fence(raw).trim();
    t.strip_suffix(';').unwrap_or(t).trim_end().to_string()
}

fn schema_prompt(base: &str, ctx: &SqlContext) -> String {
    let mut s = format!("{base}\nSchema:\n{}", ctx.schema.render());
    if !ctx.demonstrations.is_empty() {
        s.push_str(&format!("Examples:\n{}", render_demos(&ctx.demonstrations)));
    }
    s
}

fn require_tables(ctx: &SqlContext) -> Result<()> {
    if ctx.schema.tables.is_empty() {
        return Err(Error::NoCandidateTables);
    }
    Ok(())
}

pub fn generate_two_step(query: &str, ctx: &SqlContext, gateway: &Gateway) -> Result<GeneratedSql> {
    require_tables(ctx)?;
    let sir = build_sir(query, ctx, gateway)?;
    let system = schema_prompt(crate::prompts::SQL_GENERATE, ctx);
    let first = clean_sql(
        &gateway.chat_text(&ChatRequest::new("sql_generate").system(system.clone()).user(&sir.rewritten_query))?,
    );
    let check = validate_sql(&first, &ctx.schema);
    let (sql, check) = if check.is_ok() {
        (first, check)
    } else {
        let repair = ChatRequest::new("sql_repair")
            .system(format!("{}\n{}", crate::prompts::SQL_REPAIR, system))
            .user(&sir.rewritten_query)
            .assistant(first)
            .user(format!("Problems: {}. Question: {}", check.violations.join("; "), sir.rewritten_query));
        let second = clean_sql(&gateway.chat_text(&repair)?);
        let check = validate_sql(&second, &ctx.schema);
        if !check.is_ok() {
            return Err(Error::Generation(check.violations));
        }
        (second, check)
    };
    Ok(GeneratedSql {
        sql_text: sql,
        strategy: Strategy::TwoStep,
        sir: Some(sir),
        tables_used: check.tables_used,
        warnings: Vec::new(),
    })
}

pub fn generate_one_step(query: &str, ctx: &SqlContext, gateway: &Gateway) -> Result<GeneratedSql> {
    require_tables(ctx)?;
    let endpoint =
        gateway.one_step.as_ref().ok_or_else(|| Error::Config(vec!["one_step: no endpoint configured".into()]))?;
    let req = ChatRequest::new("sql_one_step").system(schema_prompt(crate::prompts::ONE_STEP, ctx)).user(query);
    let sql = clean_sql(&crate::gateway::completion_text(endpoint.chat(&req)?)?);
    let check = validate_sql(&sql, &ctx.schema);
    if !check.is_ok() {
        return Err(Error::Generation(check.violations));
    }
    Ok(GeneratedSql {
        sql_text: sql,
        strategy: Strategy::OneStep,
        sir: None,
        tables_used: check.tables_used,
        warnings: Vec::new(),
    })
}

/// Runs the selected strategy; a failing one-step path degrades to two-step.
pub fn generate_sql(
    query: &str,
    ctx: &SqlContext,
    strategy: Strategy,
    force_one_step: bool,
    gateway: &Gateway,
) -> Result<GeneratedSql> {
    if force_one_step && strategy == Strategy::TwoStep {
        return Err(Error::Config(vec!["sql.force_one_step: the strategy rule selected two_step".into()]));
    }
    if strategy == Strategy::TwoStep {
        return generate_two_step(query, ctx, gateway);
    }
    match generate_one_step(query, ctx, gateway) {
        Ok(g) => Ok(g),
        Err(e @ Error::NoCandidateTables) => Err(e),
        Err(e) => {
            tracing::warn!(error = %e, "one-step generation unavailable; using two-step");
            let mut g = generate_two_step(query, ctx, gateway)?;
            g.warnings.push("one_step_unavailable".to_string());
            Ok(g)
        }
    }
}
