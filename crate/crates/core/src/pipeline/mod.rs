//! Training-data preparation.
//!
//! Stage order: reverse-engineer questions from logged SQL and generate
//! questions from the schema, judge and filter, augment the survivors, judge
//! the augmented pairs, then inject corrupted negatives at a fixed ratio.
//! Every stage keeps input order, so a run is a pure function of its inputs,
//! the stub replies and the seed.

mod corrupt;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway};
use crate::reply::{parse_json, strip_fence};
use crate::sqlgen::{clean_sql, generate_two_step, validate_sql, Demonstration, SqlContext};
use crate::tables::SchemaSource;
use crate::{Error, Result};

pub use corrupt::{corrupt, ErrorCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    ReverseEngineered,
    SchemaGenerated,
    Augmented,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySqlPair {
    pub id: String,
    pub question: String,
    pub sql: String,
    pub source: PairSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub negative_ratio: f64,
    pub quality_floor: f64,
    pub augment_factor: usize,
    pub error_categories: Vec<String>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            negative_ratio: 0.05,
            quality_floor: 0.5,
            augment_factor: 2,
            error_categories: ErrorCategory::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if !(0.0..=0.5).contains(&self.negative_ratio) {
            p.push(format!("{prefix}.negative_ratio: must lie in [0, 0.5], got {}", self.negative_ratio));
        }
        if !(0.0..=1.0).contains(&self.quality_floor) {
            p.push(format!("{prefix}.quality_floor: must lie in [0, 1], got {}", self.quality_floor));
        }
        for c in &self.error_categories {
            if ErrorCategory::parse(c).is_none() {
                p.push(format!("{prefix}.error_categories: unknown category `{c}`"));
            }
        }
        if self.negative_ratio > 0.0 && self.error_categories.is_empty() {
            p.push(format!("{prefix}.error_categories: must not be empty when negative_ratio > 0"));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("pipeline");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    fn categories(&self) -> Vec<ErrorCategory> {
        self.error_categories.iter().filter_map(|c| ErrorCategory::parse(c)).collect()
    }
}

/// Smallest `n` with `n == round_half_up(ratio * (positives + n))`, so that
/// negatives make up `ratio` of the final set.
pub fn negative_count(positives: usize, ratio: f64) -> usize {
    let round = |x: f64| (x + 0.5 + 1e-9).floor() as usize;
    (0..=positives + 1).find(|&n| n == round(ratio * (positives + n) as f64)).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlLogEntry {
    pub sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<String>,
}

/// One statement per line, or JSONL objects `{sql, ts}`; blank lines ignored.
pub fn parse_sql_log(text: &str) -> Result<Vec<SqlLogEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let e: SqlLogEntry =
                serde_json::from_str(line).map_err(|e| Error::Validation(format!("sql log line {}: {e}", i + 1)))?;
            out.push(e);
        } else {
            out.push(SqlLogEntry { sql: line.to_string(), ts: None });
        }
    }
    Ok(out)
}

/// Veto file: one pair id per line.
pub fn parse_veto(text: &str) -> HashSet<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string).collect()
}

pub fn parse_demonstrations(text: &str) -> Result<Vec<Demonstration>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(format!("demonstrations line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub stage: String,
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stage_counts: BTreeMap<String, usize>,
    pub skipped: Vec<SkipEntry>,
    /// Ids kept without a usable judge score.
    pub flagged: Vec<String>,
}

impl PipelineReport {
    fn skip(&mut self, stage: &str, item: impl Into<String>, reason: impl std::fmt::Display) {
        self.skipped.push(SkipEntry { stage: stage.into(), item: item.into(), reason: reason.to_string() });
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineInputs {
    pub sql_log: Vec<SqlLogEntry>,
    pub schema: SchemaSource,
    pub knowledge: Vec<String>,
    /// Annotated pairs used as in-context examples; bad cases from a previous run go here.
    pub demonstrations: Vec<Demonstration>,
    pub veto: HashSet<String>,
    /// Also generate questions from the schema.
    pub schema_questions: bool,
}

fn render_demos(demos: &[Demonstration]) -> String {
    demos.iter().map(|d| format!("Q: {}\nSQL: {}\n", d.question, d.sql)).collect()
}

pub fn reverse_engineer(inputs: &PipelineInputs, gateway: &Gateway, report: &mut PipelineReport) -> Vec<QuerySqlPair> {
    let system = format!(
        "{}\nSchema:\n{}Knowledge:\n{}\nExamples:\n{}",
        crate::prompts::REVERSE_ENGINEER,
        inputs.schema.render(),
        inputs.knowledge.join("\n"),
        render_demos(&inputs.demonstrations)
    );
    let mut out = Vec::new();
    for (i, entry) in inputs.sql_log.iter().enumerate() {
        let sql = clean_sql(&entry.sql);
        let check = validate_sql(&sql, &inputs.schema);
        if !check.is_ok() {
            report.skip("reverse_engineered", format!("log:{}", i + 1), check.violations.join("; "));
            continue;
        }
        let reply = gateway.chat_text(&ChatRequest::new("reverse_engineer").system(system.clone()).user(&sql));
        match reply.map(|r| strip_fence(&r).trim().to_string()) {
            Ok(q) if !q.is_empty() => out.push(QuerySqlPair {
                id: format!("re-{:04}", out.len() + 1),
                question: q,
                sql,
                source: PairSource::ReverseEngineered,
                quality: None,
                error_category: None,
            }),
            Ok(_) => report.skip("reverse_engineered", format!("log:{}", i + 1), "empty question"),
            Err(e) => report.skip("reverse_engineered", format!("log:{}", i + 1), e),
        }
    }
    out
}

pub fn generate_from_schema(
    inputs: &PipelineInputs,
    gateway: &Gateway,
    report: &mut PipelineReport,
) -> Result<Vec<QuerySqlPair>> {
    if inputs.schema.tables.is_empty() {
        return Err(Error::Validation("schema-driven generation needs a non-empty schema".into()));
    }
    let req = ChatRequest::new("question_generate")
        .system(format!("{}\nSchema:\n{}", crate::prompts::QUESTION_GENERATE, inputs.schema.render()))
        .user("Generate questions.");
    let questions: Vec<String> = match gateway.chat_text(&req) {
        Ok(raw) => match parse_json(&raw) {
            Some(q) => q,
            None => {
                report.skip("schema_generated", "questions", Error::reply_parse("question list", raw));
                return Ok(Vec::new());
            }
        },
        Err(e) => {
            report.skip("schema_generated", "questions", e);
            return Ok(Vec::new());
        }
    };
    let mut ctx = SqlContext::new(inputs.schema.clone());
    ctx.knowledge = inputs.knowledge.clone();
    ctx.demonstrations = inputs.demonstrations.clone();
    let mut out = Vec::new();
    for q in questions.into_iter().filter(|q| !q.trim().is_empty()) {
        match generate_two_step(&q, &ctx, gateway) {
            Ok(g) => out.push(QuerySqlPair {
                id: format!("sg-{:04}", out.len() + 1),
                question: q,
                sql: g.sql_text,
                source: PairSource::SchemaGenerated,
                quality: None,
                error_category: None,
            }),
            Err(e) => report.skip("schema_generated", q, e),
        }
    }
    Ok(out)
}

fn judge(pair: &QuerySqlPair, gateway: &Gateway) -> Option<f64> {
    let req = ChatRequest::new("quality_judge")
        .system(crate::prompts::QUALITY_JUDGE)
        .user(format!("Question: {}\nSQL: {}", pair.question, pair.sql));
    let raw = gateway.judge_text(&req).ok()?;
    let v: f64 = strip_fence(&raw).trim().parse().ok()?;
    (0.0..=1.0).contains(&v).then_some(v)
}

/// Scores every pair and keeps those at or above `floor`; vetoed ids always go.
pub fn quality_filter(
    pairs: Vec<QuerySqlPair>,
    gateway: &Gateway,
    floor: f64,
    veto: &HashSet<String>,
    report: &mut PipelineReport,
) -> Vec<QuerySqlPair> {
    let mut out = Vec::with_capacity(pairs.len());
    for mut p in pairs {
        if veto.contains(&p.id) {
            report.skip("quality_filter", p.id.clone(), "vetoed");
            continue;
        }
        match judge(&p, gateway) {
            Some(q) => {
                p.quality = Some(q);
                if q >= floor {
                    out.push(p);
                } else {
                    report.skip("quality_filter", p.id.clone(), format!("quality {q} below floor {floor}"));
                }
            }
            None => {
                p.quality = None;
                report.flagged.push(p.id.clone());
                out.push(p);
            }
        }
    }
    out
}

/// Up to `factor` validated rewrites per seed.
pub fn augment(
    seeds: &[QuerySqlPair],
    factor: usize,
    schema: &SchemaSource,
    gateway: &Gateway,
    report: &mut PipelineReport,
) -> Vec<QuerySqlPair> {
    #[derive(Deserialize)]
    struct Rewrite {
        question: String,
        sql: String,
    }
    if factor == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for seed in seeds {
        let req = ChatRequest::new("augment")
            .system(format!("{}\nSchema:\n{}Produce {factor} pairs.", crate::prompts::AUGMENT, schema.render()))
            .user(format!("Question: {}\nSQL: {}", seed.question, seed.sql));
        let rewrites: Vec<Rewrite> = match gateway.chat_text(&req) {
            Ok(raw) => match parse_json(&raw) {
                Some(r) => r,
                None => {
                    report.skip("augmented", seed.id.clone(), Error::reply_parse("augmentation", raw));
                    continue;
                }
            },
            Err(e) => {
                report.skip("augmented", seed.id.clone(), e);
                continue;
            }
        };
        for r in rewrites.into_iter().take(factor) {
            let sql = clean_sql(&r.sql);
            let check = validate_sql(&sql, schema);
            if !check.is_ok() || r.question.trim().is_empty() {
                report.skip("augmented", seed.id.clone(), format!("invalid rewrite: {}", check.violations.join("; ")));
                continue;
            }
            out.push(QuerySqlPair {
                id: format!("aug-{:04}", out.len() + 1),
                question: r.question.trim().to_string(),
                sql,
                source: PairSource::Augmented,
                quality: None,
                error_category: None,
            });
        }
    }
    out
}

/// Appends seeded corruptions so that negatives make up `negative_ratio` of the output.
pub fn inject_negatives(
    pairs: Vec<QuerySqlPair>,
    config: &PipelineConfig,
    schema: &SchemaSource,
    report: &mut PipelineReport,
) -> Result<Vec<QuerySqlPair>> {
    config.validate()?;
    let want = negative_count(pairs.len(), config.negative_ratio);
    if want == 0 {
        return Ok(pairs);
    }
    let categories = config.categories();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut negatives = Vec::with_capacity(want);
    for &i in &order {
        if negatives.len() == want {
            break;
        }
        let start = rng.random_range(0..categories.len());
        for k in 0..categories.len() {
            let c = categories[(start + k) % categories.len()];
            if let Some(sql) = corrupt(&pairs[i].sql, c, schema, &mut rng) {
                negatives.push(QuerySqlPair {
                    id: format!("neg-{:04}", negatives.len() + 1),
                    question: pairs[i].question.clone(),
                    sql,
                    source: PairSource::Negative,
                    quality: None,
                    error_category: Some(c.as_str().to_string()),
                });
                break;
            }
        }
    }
    if negatives.len() < want {
        report.skip("negatives", format!("{} of {want}", negatives.len()), "not enough corruptible pairs");
    }
    let mut out = pairs;
    out.extend(negatives);
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub pairs: Vec<QuerySqlPair>,
    pub report: PipelineReport,
}

impl PipelineOutput {
    pub fn dataset_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            s.push_str(&serde_json::to_string(p).expect("pairs serialize"));
            s.push('\n');
        }
        s
    }

    /// Writes `dataset.jsonl` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("dataset.jsonl"), self.dataset_jsonl())?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        Ok(())
    }
}

pub fn run_pipeline(config: &PipelineConfig, inputs: &PipelineInputs, gateway: &Gateway) -> Result<PipelineOutput> {
    config.validate()?;
    let mut report = PipelineReport::default();
    let mut generated = reverse_engineer(inputs, gateway, &mut report);
    report.stage_counts.insert("reverse_engineered".into(), generated.len());
    let from_schema = if inputs.schema_questions && !inputs.schema.tables.is_empty() {
        generate_from_schema(inputs, gateway, &mut report)?
    } else {
        Vec::new()
    };
    report.stage_counts.insert("schema_generated".into(), from_schema.len());
    generated.extend(from_schema);

    let seeds = quality_filter(generated, gateway, config.quality_floor, &inputs.veto, &mut report);
    report.stage_counts.insert("quality_kept".into(), seeds.len());

    let augmented = augment(&seeds, config.augment_factor, &inputs.schema, gateway, &mut report);
    report.stage_counts.insert("augmented".into(), augmented.len());
    let augmented = quality_filter(augmented, gateway, config.quality_floor, &inputs.veto, &mut report);
    report.stage_counts.insert("augmented_kept".into(), augmented.len());

    let mut positives = seeds;
    positives.extend(augmented);
    let positive_count = positives.len();
    let pairs = inject_negatives(positives, config, &inputs.schema, &mut report)?;
    report.stage_counts.insert("negatives".into(), pairs.len() - positive_count);
    report.stage_counts.insert("total".into(), pairs.len());
    Ok(PipelineOutput { pairs, report })
}

#[cfg(test)]
mod tests;
