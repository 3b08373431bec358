//! Data insight: a planner drives data preparation and tool calls in a
//! ReAct loop, then consolidates the observations into a report.
//!
//! Findings are derived from attachments, never from model text, so every
//! number in a finding points at the attachment it came from.

mod attribution;
mod tools;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::db::{Database, ResultTable};
use crate::gateway::{ChatRequest, Gateway};
use crate::reply::{parse_json, strip_fence};
use crate::sqlgen::{generate_two_step, SqlContext};
use crate::{Error, Result};

pub use attribution::{attribute, compensated_sum, split_periods, AttributionResult, Contribution};
pub use tools::{AttributionTool, InsightTool, StubDiagnosis, StubForecast, TableRefs, ToolOutput, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightRequest {
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_rows: Option<ResultTable>,
    pub session_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    PrepareData,
    RunTool,
    Finalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerStep {
    pub step_id: u32,
    pub kind: StepKind,
    #[serde(default)]
    pub instruction: String,
    /// Registry key; dispatch fails for unregistered names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default)]
    pub args: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ObservationContent {
    Table(ResultTable),
    Tool(ToolOutput),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub id: String,
    /// Step that produced it; 0 for the request's base rows.
    pub step_id: u32,
    pub content: ObservationContent,
}

impl Attachment {
    fn summary(&self) -> String {
        match &self.content {
            ObservationContent::Table(t) => {
                let preview: Vec<String> =
                    t.rows.iter().take(10).map(|r| r.iter().map(|c| c.key()).collect::<Vec<_>>().join(", ")).collect();
                format!(
                    "{}: table [{}] with {} rows: {}",
                    self.id,
                    t.columns.join(", "),
                    t.rows.len(),
                    preview.join(" | ")
                )
            }
            ObservationContent::Tool(ToolOutput::Attribution(a)) => {
                let parts: Vec<String> = a
                    .contributions
                    .iter()
                    .map(|c| format!("{} {:+} ({:.1}%)", c.value, c.delta, c.contribution_share * 100.0))
                    .collect();
                format!(
                    "{}: attribution of {} by {}: total {} -> {}; {}",
                    self.id,
                    a.metric,
                    a.dimension,
                    a.total_before,
                    a.total_after,
                    parts.join(", ")
                )
            }
            ObservationContent::Tool(ToolOutput::Json(v)) => format!("{}: {v}", self.id),
            ObservationContent::Error(e) => format!("{}: error: {e}", self.id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub title: String,
    /// Attachment id the finding is drawn from.
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightReport {
    pub narrative: String,
    pub findings: Vec<Finding>,
    pub attachments: Vec<Attachment>,
    #[serde(default)]
    pub flags: Vec<String>,
    pub steps: Vec<PlannerStep>,
}

/// Fetches the data a planner instruction asks for.
pub trait DataPreparer {
    fn prepare(&self, instruction: &str) -> Result<ResultTable>;
}

/// Two-step generation over `ctx`, executed on `db`.
pub struct SqlPreparer<'a> {
    pub ctx: &'a SqlContext,
    pub db: &'a Database,
    pub gateway: &'a Gateway,
}

impl DataPreparer for SqlPreparer<'_> {
    fn prepare(&self, instruction: &str) -> Result<ResultTable> {
        let sql = generate_two_step(instruction, self.ctx, self.gateway)?;
        self.db.query(&sql.sql_text)
    }
}

pub const DEFAULT_MAX_STEPS: usize = 8;

#[derive(Deserialize)]
struct WireStep {
    kind: StepKind,
    #[serde(default)]
    instruction: String,
    #[serde(default)]
    tool: Option<String>,
    #[serde(default)]
    args: Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanReply {
    Many(Vec<WireStep>),
    One(WireStep),
}

/// Kind, instruction, tool name and arguments of one planned step.
pub type PlannedStep = (StepKind, String, Option<String>, Map<String, Value>);

/// Parses a planner reply: one step object or an array of them.
pub fn parse_plan(raw: &str) -> Result<Vec<PlannedStep>> {
    let steps = match parse_json::<PlanReply>(raw).ok_or_else(|| Error::reply_parse("plan", raw))? {
        PlanReply::Many(v) => v,
        PlanReply::One(s) => vec![s],
    };
    if steps.is_empty() {
        return Err(Error::reply_parse("plan", raw));
    }
    steps
        .into_iter()
        .map(|s| {
            if s.kind == StepKind::RunTool && s.tool.as_deref().is_none_or(str::is_empty) {
                return Err(Error::reply_parse("plan", raw));
            }
            Ok((s.kind, s.instruction, s.tool, s.args))
        })
        .collect()
}

pub struct InsightAgent<'a> {
    pub gateway: &'a Gateway,
    pub tools: &'a ToolRegistry,
    pub preparer: &'a dyn DataPreparer,
    pub max_steps: usize,
}

impl InsightAgent<'_> {
    fn planner_request(
        &self,
        request: &InsightRequest,
        knowledge: &[String],
        attachments: &[Attachment],
    ) -> ChatRequest {
        let mut user = format!("Request: {}\n", request.user_text);
        if let Some(sql) = &request.base_sql {
            user.push_str(&format!("Base SQL: {sql}\n"));
        }
        user.push_str("Observations:\n");
        for a in attachments {
            user.push_str(&a.summary());
            user.push('\n');
        }
        ChatRequest::new("insight_plan")
            .system(format!(
                "{}\nRegistered tools: {}\nDomain knowledge:\n{}",
                crate::prompts::INSIGHT_PLAN,
                self.tools.names().join(", "),
                knowledge.join("\n")
            ))
            .user(user)
    }

    /// Runs the plan-act-observe loop and consolidates a report.
    pub fn run(&self, request: &InsightRequest, knowledge: &[String]) -> Result<InsightReport> {
        if request.user_text.trim().is_empty() {
            return Err(Error::Validation("insight request text must not be empty".into()));
        }
        let max_steps = self.max_steps.max(1);
        let mut attachments = Vec::new();
        if let Some(rows) = &request.base_rows {
            attachments.push(Attachment {
                id: "base".into(),
                step_id: 0,
                content: ObservationContent::Table(rows.clone()),
            });
        }
        let mut executed: Vec<PlannerStep> = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        let mut finalized = false;
        while executed.len() < max_steps {
            if queue.is_empty() {
                let raw = self.gateway.chat_text(&self.planner_request(request, knowledge, &attachments))?;
                queue.extend(parse_plan(&raw)?);
            }
            let Some((kind, instruction, tool_name, args)) = queue.pop_front() else { break };
            let step = PlannerStep { step_id: executed.len() as u32 + 1, kind, instruction, tool_name, args };
            let id = format!("obs-{}", step.step_id);
            match step.kind {
                StepKind::Finalize => {
                    executed.push(step);
                    finalized = true;
                    break;
                }
                StepKind::PrepareData => {
                    let content = match self.preparer.prepare(&step.instruction) {
                        Ok(t) => ObservationContent::Table(t),
                        Err(e) => ObservationContent::Error(e.to_string()),
                    };
                    attachments.push(Attachment { id, step_id: step.step_id, content });
                }
                StepKind::RunTool => {
                    let tables: TableRefs<'_> = attachments
                        .iter()
                        .filter_map(|a| match &a.content {
                            ObservationContent::Table(t) => Some((a.id.clone(), t)),
                            _ => None,
                        })
                        .collect();
                    let name = step.tool_name.as_deref().unwrap_or_default();
                    let content = match self.tools.run(name, &step.args, &tables) {
                        Ok(out) => ObservationContent::Tool(out),
                        Err(e @ Error::ToolDispatch(_)) if !self.tools.names().contains(&name) => return Err(e),
                        Err(e) => ObservationContent::Error(e.to_string()),
                    };
                    attachments.push(Attachment { id, step_id: step.step_id, content });
                }
            }
            executed.push(step);
        }
        let mut report = finalize(request, attachments, self.gateway)?;
        if !finalized {
            report.flags.push("plan_truncated".into());
        }
        report.steps = executed;
        Ok(report)
    }
}

fn findings_for(a: &Attachment) -> Option<Finding> {
    let title = match &a.content {
        ObservationContent::Table(t) => format!("{} rows of {}", t.rows.len(), t.columns.join(", ")),
        ObservationContent::Tool(ToolOutput::Attribution(r)) => {
            let top = r.contributions.first()?;
            format!(
                "{} changed by {:+} ({} to {}); {} = {} contributed {:+} ({:.1}% of the change)",
                r.metric,
                r.total_delta(),
                r.total_before,
                r.total_after,
                r.dimension,
                top.value,
                top.delta,
                top.contribution_share * 100.0
            )
        }
        ObservationContent::Tool(ToolOutput::Json(v)) => {
            format!("{} output", v.get("label").and_then(Value::as_str).unwrap_or("tool"))
        }
        ObservationContent::Error(_) => return None,
    };
    Some(Finding { title, evidence: a.id.clone() })
}

/// Builds findings from attachments and asks for a narrative; falls back to a template.
pub fn finalize(request: &InsightRequest, attachments: Vec<Attachment>, gateway: &Gateway) -> Result<InsightReport> {
    if attachments.is_empty() {
        return Err(Error::Validation("an insight report needs at least one observation".into()));
    }
    let findings: Vec<Finding> = attachments.iter().filter_map(findings_for).collect();
    let summaries: Vec<String> = attachments.iter().map(Attachment::summary).collect();
    let req = ChatRequest::new("insight_report").system(crate::prompts::INSIGHT_REPORT).user(format!(
        "Request: {}\nResults:\n{}",
        request.user_text,
        summaries.join("\n")
    ));
    let mut flags = Vec::new();
    let narrative = match gateway.chat_text(&req).map(|t| strip_fence(&t).trim().to_string()) {
        Ok(t) if !t.is_empty() => t,
        other => {
            if let Err(e) = other {
                tracing::warn!(error = %e, "report narrative unavailable; using template");
            }
            flags.push("narrative_templated".into());
            if findings.is_empty() {
                "No results could be computed for this request.".to_string()
            } else {
                findings.iter().map(|f| format!("{} [{}].", f.title, f.evidence)).collect::<Vec<_>>().join(" ")
            }
        }
    };
    Ok(InsightReport { narrative, findings, attachments, flags, steps: Vec::new() })
}
