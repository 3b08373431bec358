//! Name-keyed tool registry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::attribution::{attribute, split_periods, AttributionResult};
use crate::db::ResultTable;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ToolOutput {
    Attribution(AttributionResult),
    Json(Value),
}

/// Tables a tool may read, by observation id (`base` for the request's rows).
pub type TableRefs<'a> = BTreeMap<String, &'a ResultTable>;

pub trait InsightTool: Send + Sync {
    fn run(&self, args: &Map<String, Value>, tables: &TableRefs<'_>) -> Result<ToolOutput>;
}

fn arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str> {
    args.get(key).and_then(Value::as_str).ok_or_else(|| Error::ToolDispatch(format!("missing string argument `{key}`")))
}

fn arg_scalar(args: &Map<String, Value>, key: &str) -> Result<String> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::ToolDispatch(format!("missing argument `{key}`"))),
    }
}

/// The table named by `key`, else the most recently produced one.
fn table<'a>(args: &Map<String, Value>, key: &str, tables: &TableRefs<'a>) -> Result<&'a ResultTable> {
    match args.get(key).and_then(Value::as_str) {
        Some(id) => tables.get(id).copied().ok_or_else(|| Error::ToolDispatch(format!("no table `{id}`"))),
        None => tables
            .iter()
            .filter(|(k, _)| k.as_str() != "base")
            .max_by_key(|(k, _)| k.trim_start_matches("obs-").parse::<u32>().unwrap_or(0))
            .or_else(|| tables.iter().next())
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::ToolDispatch("no input table available".into())),
    }
}

/// `{dimension, metric}` plus either `{before, after}` table ids, or
/// `{table?, period_column, before, after}` period values.
pub struct AttributionTool;

impl InsightTool for AttributionTool {
    fn run(&self, args: &Map<String, Value>, tables: &TableRefs<'_>) -> Result<ToolOutput> {
        let dimension = arg(args, "dimension")?;
        let metric = arg(args, "metric")?;
        let result = if let Some(period) = args.get("period_column").and_then(Value::as_str) {
            let t = table(args, "table", tables)?;
            let (b, a) = split_periods(t, period, &arg_scalar(args, "before")?, &arg_scalar(args, "after")?)?;
            attribute(&b, &a, dimension, metric)?
        } else {
            let b = table(args, "before", tables)?;
            let a = table(args, "after", tables)?;
            attribute(b, a, dimension, metric)?
        };
        Ok(ToolOutput::Attribution(result))
    }
}

/// Placeholder forecast: repeats the last metric value for `horizon` periods.
pub struct StubForecast;

impl InsightTool for StubForecast {
    fn run(&self, args: &Map<String, Value>, tables: &TableRefs<'_>) -> Result<ToolOutput> {
        let t = table(args, "table", tables)?;
        let horizon = args.get("horizon").and_then(Value::as_u64).unwrap_or(3) as usize;
        let last = match args.get("metric").and_then(Value::as_str).and_then(|m| t.column_index(m)) {
            Some(i) => t.rows.last().and_then(|r| r[i].as_f64()),
            None => None,
        };
        Ok(ToolOutput::Json(json!({"label": "stub_forecast", "series": vec![last; horizon]})))
    }
}

/// Placeholder diagnosis: never raises an anomaly flag.
pub struct StubDiagnosis;

impl InsightTool for StubDiagnosis {
    fn run(&self, _args: &Map<String, Value>, tables: &TableRefs<'_>) -> Result<ToolOutput> {
        Ok(ToolOutput::Json(json!({"label": "stub_diagnosis", "anomaly": false, "tables_seen": tables.len()})))
    }
}

pub struct ToolRegistry {
    tools: BTreeMap<String, Box<dyn InsightTool>>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        let mut r = Self { tools: BTreeMap::new() };
        r.register("attribution", Box::new(AttributionTool));
        r.register("forecast", Box::new(StubForecast));
        r.register("diagnosis", Box::new(StubDiagnosis));
        r
    }
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn register(&mut self, name: &str, tool: Box<dyn InsightTool>) {
        self.tools.insert(name.to_string(), tool);
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn run(&self, name: &str, args: &Map<String, Value>, tables: &TableRefs<'_>) -> Result<ToolOutput> {
        self.tools.get(name).ok_or_else(|| Error::ToolDispatch(format!("unknown tool `{name}`")))?.run(args, tables)
    }
}
