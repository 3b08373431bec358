//! Evaluation: execution accuracy (EX), valid efficiency score (VES),
//! useful execution accuracy (UEX) and Recall@K.

mod compare;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::db::{Database, ResultTable};
use crate::gateway::{ChatRequest, Gateway};
use crate::reply::strip_fence;
use crate::sqlgen::parse_single_query;
use crate::{Error, Result};

pub use compare::{cells_equal, results_match, FLOAT_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Srd,
    Mrd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRound {
    pub question: String,
    pub gold_sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalItem {
    pub item_id: String,
    pub db_id: String,
    pub rounds: Vec<EvalRound>,
    pub mode: EvalMode,
}

impl EvalItem {
    pub fn validate(&self) -> Result<()> {
        let n = self.rounds.len();
        let ok = match self.mode {
            EvalMode::Srd => n == 1,
            EvalMode::Mrd => (2..=5).contains(&n),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("item {}: {:?} item has {n} rounds", self.item_id, self.mode)))
        }
    }
}

pub fn parse_dataset(text: &str) -> Result<Vec<EvalItem>> {
    let items: Vec<EvalItem> = serde_json::from_str(text)?;
    for i in &items {
        i.validate()?;
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalItem>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

fn ordered(gold_sql: &str) -> bool {
    parse_single_query(gold_sql).is_ok_and(|q| q.order_by.is_some())
}

/// Gold must execute; a failing prediction is simply wrong.
pub fn execution_accuracy(pred_sql: &str, gold_sql: &str, db: &Database) -> Result<bool> {
    let gold = db.query(gold_sql)?;
    Ok(match db.query(pred_sql) {
        Ok(pred) => results_match(&gold, &pred, ordered(gold_sql)),
        Err(_) => false,
    })
}

/// Upper clip for `t_gold / t_pred`.
pub const VES_RATIO_CLIP: f64 = 2.0;

/// `sqrt(clip(t_gold / t_pred))` for correct predictions, else 0.
pub fn ves_term(correct: bool, t_gold: f64, t_pred: f64) -> f64 {
    if !correct {
        return 0.0;
    }
    let ratio = if t_pred <= 0.0 {
        if t_gold <= 0.0 {
            1.0
        } else {
            VES_RATIO_CLIP
        }
    } else {
        t_gold / t_pred
    };
    ratio.clamp(0.0, VES_RATIO_CLIP).sqrt()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Where execution times come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Timing {
    /// Median over `runs` (at least 3) interleaved samples; each sample
    /// repeats the statement for at least `min_sample` and averages.
    Measured { runs: usize, min_sample: Duration },
    /// Seconds per SQL text; unknown statements cannot be timed.
    Recorded(HashMap<String, f64>),
}

impl Default for Timing {
    fn default() -> Self {
        Timing::Measured { runs: 5, min_sample: Duration::from_millis(2) }
    }
}

fn sample(db: &Database, sql: &str, min: Duration) -> Result<f64> {
    let (mut total, mut n) = (Duration::ZERO, 0u32);
    while total < min || n == 0 {
        total += db.time_query(sql)?;
        n += 1;
    }
    Ok(total.as_secs_f64() / f64::from(n))
}

/// `(t_gold, t_pred)` in seconds.
pub fn time_pair(gold: &str, pred: &str, db: &Database, timing: &Timing) -> Result<(f64, f64)> {
    match timing {
        Timing::Recorded(map) => {
            let get =
                |s: &str| map.get(s).copied().ok_or_else(|| Error::Validation(format!("no recorded timing for `{s}`")));
            Ok((get(gold)?, get(pred)?))
        }
        Timing::Measured { runs, min_sample } => {
            let runs = (*runs).max(3);
            db.time_query(gold)?;
            db.time_query(pred)?;
            let (mut g, mut p) = (Vec::with_capacity(runs), Vec::with_capacity(runs));
            for _ in 0..runs {
                g.push(sample(db, gold, *min_sample)?);
                p.push(sample(db, pred, *min_sample)?);
            }
            Ok((median(g), median(p)))
        }
    }
}

pub const UEX_SAMPLE_ROWS: usize = 20;

fn render_sample(r: &Result<ResultTable>) -> String {
    match r {
        Ok(t) => {
            let rows: Vec<String> = t
                .rows
                .iter()
                .take(UEX_SAMPLE_ROWS)
                .map(|row| row.iter().map(|c| c.key()).collect::<Vec<_>>().join(", "))
                .collect();
            format!("columns: {}\n{}", t.columns.join(", "), rows.join("\n"))
        }
        Err(e) => format!("error: {e}"),
    }
}

/// Verdict and whether the judge reply was unusable.
pub fn useful_execution_accuracy(
    pred_sql: &str,
    gold_sql: &str,
    question: &str,
    ex: bool,
    db: &Database,
    gateway: &Gateway,
) -> (bool, bool) {
    if ex {
        return (true, false);
    }
    let req = ChatRequest::new("uex_judge").system(crate::prompts::UEX_JUDGE).user(format!(
        "Question: {question}\nGold SQL: {gold_sql}\nGold result:\n{}\nPredicted SQL: {pred_sql}\nPredicted result:\n{}",
        render_sample(&db.query(gold_sql)),
        render_sample(&db.query(pred_sql)),
    ));
    let verdict = gateway
        .judge_text(&req)
        .map(|r| strip_fence(&r).trim().trim_end_matches('.').trim_matches('"').to_ascii_lowercase());
    match verdict.as_deref() {
        Ok("aligned") => (true, false),
        Ok("not aligned") => (false, false),
        _ => (false, true),
    }
}

/// True iff every gold id is among the first `k` ranked ids.
pub fn recall_at_k(gold: &[String], ranked: &[String], k: usize) -> bool {
    let top = &ranked[..k.min(ranked.len())];
    gold.iter().all(|g| top.contains(g))
}

pub fn mean_recall(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
}

/// Something that answers questions inside sessions with SQL.
pub trait AnswerEngine {
    fn open_session(&self, db_id: &str) -> Result<String>;
    /// Predicted SQL, or `None` when the engine replied without SQL.
    fn answer(&self, session_id: &str, question: &str) -> Result<Option<String>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ex,
    Ves,
    Uex,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub db_dir: PathBuf,
    pub metrics: Vec<Metric>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub question: String,
    pub pred_sql: Option<String>,
    pub ex: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uex: Option<bool>,
    pub ves: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub ex: bool,
    pub ves: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uex: Option<bool>,
    pub rounds: Vec<RoundOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ex: f64,
    pub ves: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uex: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_k: Option<BTreeMap<usize, f64>>,
    /// Fraction of correct rounds across all items.
    pub round_ex: f64,
    pub n_items: usize,
    pub per_item: Vec<ItemOutcome>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricReport {
    pub fn from_items(per_item: Vec<ItemOutcome>, with_uex: bool) -> Self {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        let rounds: Vec<&RoundOutcome> = per_item.iter().flat_map(|i| &i.rounds).collect();
        Self {
            ex: mean(per_item.iter().map(|i| b(i.ex))),
            ves: mean(per_item.iter().map(|i| i.ves)),
            uex: with_uex.then(|| mean(per_item.iter().map(|i| b(i.uex.unwrap_or(false))))),
            recall_at_k: None,
            round_ex: mean(rounds.iter().map(|r| b(r.ex))),
            n_items: per_item.len(),
            per_item,
        }
    }

    /// Plain-text summary table.
    pub fn render(&self) -> String {
        let mut s = format!("{:<24} {:>5} {:>8} {:>5}\n", "item", "EX", "VES", "UEX");
        for i in &self.per_item {
            let uex = i.uex.map_or("-".to_string(), |u| u8::from(u).to_string());
            s.push_str(&format!("{:<24} {:>5} {:>8.4} {:>5}\n", i.item_id, u8::from(i.ex), i.ves, uex));
        }
        let uex = self.uex.map_or("-".to_string(), |u| format!("{u:.4}"));
        s.push_str(&format!(
            "{:<24} {:>5.4} {:>8.4} {:>5}\n",
            format!("mean (n={})", self.n_items),
            self.ex,
            self.ves,
            uex
        ));
        s
    }
}

/// Replays every item through `engine`, one session per item, rounds in order.
pub fn run_eval(
    items: &[EvalItem],
    engine: &dyn AnswerEngine,
    opts: &EvalOptions,
    gateway: &Gateway,
) -> Result<MetricReport> {
    let want = |m| opts.metrics.contains(&m);
    let mut dbs: HashMap<String, Database> = HashMap::new();
    let mut per_item = Vec::with_capacity(items.len());
    for item in items {
        item.validate()?;
        if !dbs.contains_key(&item.db_id) {
            dbs.insert(item.db_id.clone(), Database::open_id(&opts.db_dir, &item.db_id)?);
        }
        let db = &dbs[&item.db_id];
        per_item.push(eval_item(item, engine, db, opts, gateway, want(Metric::Uex), want(Metric::Ves)));
    }
    Ok(MetricReport::from_items(per_item, want(Metric::Uex)))
}

fn eval_item(
    item: &EvalItem,
    engine: &dyn AnswerEngine,
    db: &Database,
    opts: &EvalOptions,
    gateway: &Gateway,
    with_uex: bool,
    with_ves: bool,
) -> ItemOutcome {
    let mut out = ItemOutcome {
        item_id: item.item_id.clone(),
        ex: false,
        ves: 0.0,
        uex: with_uex.then_some(false),
        rounds: Vec::new(),
        error: None,
        flags: Vec::new(),
    };
    let session = match engine.open_session(&item.db_id) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    for round in &item.rounds {
        let mut r = RoundOutcome {
            question: round.question.clone(),
            pred_sql: None,
            ex: false,
            uex: None,
            ves: 0.0,
            error: None,
        };
        match engine.answer(&session, &round.question) {
            Ok(pred) => r.pred_sql = pred,
            Err(e) => r.error = Some(e.to_string()),
        }
        let pred = r.pred_sql.clone().unwrap_or_default();
        match execution_accuracy(&pred, &round.gold_sql, db) {
            Ok(ex) => r.ex = ex && r.pred_sql.is_some(),
            Err(e) => {
                r.error = Some(format!("gold failed: {e}"));
                out.flags.push("gold_failed".into());
            }
        }
        if with_uex {
            let (u, unparsed) = if r.pred_sql.is_some() {
                useful_execution_accuracy(&pred, &round.gold_sql, &round.question, r.ex, db, gateway)
            } else {
                (false, false)
            };
            if unparsed {
                out.flags.push("uex_unparseable".into());
            }
            r.uex = Some(u);
        }
        if with_ves && r.ex {
            match time_pair(&round.gold_sql, &pred, db, &opts.timing) {
                Ok((g, p)) => r.ves = ves_term(true, g, p),
                Err(e) => {
                    out.flags.push("timing_failed".into());
                    tracing::warn!(item = %item.item_id, error = %e, "timing failed");
                }
            }
        }
        out.rounds.push(r);
    }
    out.ex = out.rounds.iter().all(|r| r.ex);
    if with_uex {
        out.uex = Some(out.rounds.iter().all(|r| r.uex == Some(true)));
    }
    if with_ves && out.ex {
        out.ves = mean(out.rounds.iter().map(|r| r.ves));
    }
    out
}
