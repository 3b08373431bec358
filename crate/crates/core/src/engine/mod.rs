//! Per-message orchestration: dialogue analysis, knowledge retrieval,
//! clarification, table selection, SQL generation, execution and insight.

mod config;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use config::{EngineConfig, Features, Providers, RetrievalConfig, StrategyConfig, CONFIG_PATH_VAR, ENV_PREFIX};

use crate::db::{Cell, Database, ResultTable};
use crate::dialogue::{
    assess_integrity, check_session_id, clarify_intent, classify_intent, complete_from_history, route_intent, Action,
    ClarificationOption, ClarifyOutcome, Completion, DialogueTurn, IntentClass, PendingClarification, ReplyKind,
    SessionState, SessionStore,
};
use crate::eval::AnswerEngine;
use crate::gateway::Gateway;
use crate::insight::{InsightAgent, InsightReport, InsightRequest, SqlPreparer, ToolRegistry};
use crate::knowledge::{parse_jsonl, FineOptions, KnowledgeEntry, KnowledgeStore, Label, RetrievalResult};
use crate::pipeline::parse_demonstrations;
use crate::sqlgen::{
    domain_similarity, generate_sql, select_strategy, top_demonstrations, Demonstration, DomainProfile, Sir,
    SqlContext, Strategy,
};
use crate::tables::{SchemaSource, TableIndex};
use crate::{Error, Result};

/// Reply to one user message.
///
/// `kind = answer` carries `sql`; `kind = clarify` carries `options`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub kind: ReplyKind,
    pub message: String,
    pub turn_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<Cell>>>,
    /// Rows were cut at the configured cap.
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sir: Option<Sir>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insight: Option<InsightReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<ClarificationOption>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allows_free_text: Option<bool>,
    /// Diagnostic code of a reject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MessageResponse {
    fn new(kind: ReplyKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            turn_id: 0,
            sql: None,
            columns: None,
            rows: None,
            truncated: false,
            sir: None,
            strategy: None,
            tables: Vec::new(),
            insight: None,
            options: None,
            allows_free_text: None,
            code: None,
            warnings: Vec::new(),
        }
    }

    fn reject(code: &str, message: impl Into<String>) -> Self {
        let mut r = Self::new(ReplyKind::Reject, message);
        r.code = Some(code.to_string());
        r
    }

    fn from_error(e: &Error) -> Self {
        let message = match e {
            Error::ClarificationExhausted(_) => {
                "I could not pin down what you are asking for. Please rephrase the question with the exact metric and scope.".to_string()
            }
            Error::NoCandidateTables => "I could not find data relevant to this question.".to_string(),
            Error::Generation(_) => "I could not write a valid query for this question. Please rephrase it.".to_string(),
            other => format!("The request could not be completed: {other}"),
        };
        Self::reject(e.code(), message)
    }
}

/// Word stems that ask for analysis beyond retrieval.
const ANALYSIS_STEMS: [&str; 3] = ["attribut", "forecast", "compar"];

pub fn wants_insight(text: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .any(|w| w == "why" || ANALYSIS_STEMS.iter().any(|s| w.starts_with(s)))
}

/// Trailing turns that ended without an answer or reject.
fn open_streak(state: &SessionState) -> usize {
    state
        .turns
        .iter()
        .rev()
        .take_while(|t| matches!(t.system_reply_kind, ReplyKind::Clarify | ReplyKind::AskMissing))
        .count()
}

/// Shared engine; every method takes `&self` and is safe across threads.
pub struct Engine {
    config: EngineConfig,
    gateway: Arc<Gateway>,
    knowledge: KnowledgeStore,
    schema: SchemaSource,
    tables: TableIndex,
    db: Mutex<Database>,
    sessions: SessionStore,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    demonstrations: Vec<Demonstration>,
    tools: ToolRegistry,
    s_domain: f64,
    strategy: Strategy,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("database", &self.config.database).field("strategy", &self.strategy).finish()
    }
}

fn read_knowledge_dir(dir: &Path) -> Result<Vec<KnowledgeEntry>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f)?;
        out.extend(parse_jsonl(&text).map_err(|e| Error::Ingest(format!("{}: {e}", f.display())))?);
    }
    Ok(out)
}

impl Engine {
    pub fn from_config(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let gateway = config.gateway()?;
        Self::with_gateway(config, gateway)
    }

    /// Builds the engine with an explicit gateway instead of the configured providers.
    pub fn with_gateway(config: EngineConfig, gateway: Gateway) -> Result<Self> {
        config.validate()?;
        let gateway = Arc::new(gateway);
        let schema = SchemaSource::load(&config.resolve(&config.schema_file))?;
        let db = Database::open_id(&config.resolve(&config.database_dir), &config.database)?;
        let knowledge = KnowledgeStore::new(gateway.clone());
        knowledge.ingest(read_knowledge_dir(&config.resolve(&config.knowledge_dir))?)?;
        let demonstrations = match &config.demonstrations_file {
            Some(p) => parse_demonstrations(&std::fs::read_to_string(config.resolve(p))?)?,
            None => Vec::new(),
        };
        let st = &config.strategy;
        let s_domain = if st.target_keywords.is_empty() {
            0.0
        } else {
            let target = DomainProfile { name: "target".into(), keywords: st.target_keywords.clone() };
            let source = DomainProfile { name: "source".into(), keywords: st.source_keywords.clone() };
            domain_similarity(&target, &source, &gateway)?
        };
        let strategy = select_strategy(st.n_labeled, s_domain, &st.thresholds());
        let tables = TableIndex::build(&schema, &gateway)?;
        let sessions = SessionStore::new(config.resolve(&config.sessions_dir))?;
        tracing::info!(database = %config.database, ?strategy, s_domain, entries = knowledge.len(), "engine ready");
        Ok(Self {
            gateway,
            knowledge,
            schema,
            tables,
            db: Mutex::new(db),
            sessions,
            locks: Mutex::new(HashMap::new()),
            demonstrations,
            tools: ToolRegistry::default(),
            s_domain,
            strategy,
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn knowledge(&self) -> &KnowledgeStore {
        &self.knowledge
    }

    pub fn schema(&self) -> &SchemaSource {
        &self.schema
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn s_domain(&self) -> f64 {
        self.s_domain
    }

    pub fn query(&self, sql: &str) -> Result<ResultTable> {
        self.db.lock().expect("database lock poisoned").query(sql)
    }

    pub fn create_session(&self) -> Result<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.sessions.save(&SessionState::new(id.as_str()))?;
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<SessionState> {
        self.sessions.load(id)?.ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn search_knowledge(&self, query: &str, k: usize, n: usize) -> Result<RetrievalResult> {
        self.knowledge.retrieve(query, k, n, FineOptions::default())
    }

    pub fn ingest_knowledge(&self, entries: Vec<KnowledgeEntry>) -> Result<usize> {
        self.knowledge.ingest(entries)
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table poisoned").entry(id.to_string()).or_default().clone()
    }

    /// Handles one user message. Domain failures become `kind = reject`
    /// replies; only bad input and unknown sessions are errors.
    pub fn handle_message(&self, session_id: &str, text: &str, insight: bool) -> Result<MessageResponse> {
        check_session_id(session_id)?;
        if text.trim().is_empty() {
            return Err(Error::Validation("message text must not be empty".into()));
        }
        let lock = self.session_lock(session_id);
        let _serial = lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut state = self.session(session_id)?;
        let mut turn = DialogueTurn::new(state.next_turn_id(), text);
        let mut warnings = Vec::new();
        let mut resp = match self.process(&mut state, &mut turn, text, insight, &mut warnings) {
            Ok(r) => r,
            Err(e) => {
                tracing::info!(session = session_id, code = e.code(), error = %e, "message rejected");
                MessageResponse::from_error(&e)
            }
        };
        resp.turn_id = turn.turn_id;
        warnings.append(&mut resp.warnings);
        resp.warnings = warnings;
        turn.system_reply_kind = resp.kind;
        turn.sql = resp.sql.clone();
        let mirror = (resp.kind == ReplyKind::Answer && self.config.features.mirror_history).then(|| {
            let id = format!("history-{session_id}-{}", turn.turn_id);
            let name = format!("{session_id}#{}", turn.turn_id);
            let text = turn.rewritten_text.as_deref().unwrap_or(turn.effective_text());
            let mut e = KnowledgeEntry::new(&id, Label::History, &name, text);
            e.demonstration = turn.sql.clone();
            e
        });
        state.push_turn(turn)?;
        self.sessions.save(&state)?;
        if let Some(entry) = mirror {
            if let Err(e) = self.knowledge.ingest(vec![entry]) {
                tracing::warn!(error = %e, "history mirroring failed");
            }
        }
        Ok(resp)
    }

    fn process(
        &self,
        state: &mut SessionState,
        turn: &mut DialogueTurn,
        text: &str,
        insight: bool,
        warnings: &mut Vec<String>,
    ) -> Result<MessageResponse> {
        let gw = &*self.gateway;
        let pending = state.pending_clarification.take();
        let resolved = pending.as_ref().and_then(|p| p.merge_answer(text));
        let query = if let Some(merged) = resolved {
            if let Some(src) = state.turns.iter().rev().find(|t| t.system_reply_kind == ReplyKind::Clarify) {
                turn.detected_metrics = src.detected_metrics.clone();
                turn.detected_dimensions = src.detected_dimensions.clone();
            }
            turn.completed_text = Some(merged.clone());
            turn.intent = Some(IntentClass::COMPLETE);
            merged
        } else {
            if pending.is_some() {
                warnings.push("clarification_replaced".into());
            }
            let assessment = assess_integrity(text, gw)?;
            let completion = if self.config.features.history_completion {
                complete_from_history(text, &assessment, state, gw)?
            } else {
                Completion {
                    text: text.to_string(),
                    source_turn: None,
                    metrics: assessment.metrics.clone(),
                    dimensions: assessment.dimensions.clone(),
                    flags: Vec::new(),
                }
            };
            warnings.extend(completion.flags);
            turn.detected_metrics = completion.metrics;
            turn.detected_dimensions = completion.dimensions;
            let intent = classify_intent(&completion.text, gw)?;
            turn.completed_text = Some(completion.text.clone());
            turn.intent = Some(intent);
            match route_intent(intent, state) {
                Action::Reject(m) => {
                    let code = if intent == IntentClass::NON_BI { "non_bi" } else { "missing_information" };
                    return Ok(MessageResponse::reject(code, m));
                }
                Action::AskMissing(m) => {
                    if open_streak(state) >= self.config.max_clarify_rounds as usize {
                        return Err(Error::ClarificationExhausted(self.config.max_clarify_rounds));
                    }
                    return Ok(MessageResponse::new(ReplyKind::AskMissing, m));
                }
                Action::Proceed => completion.text,
            }
        };

        let retrieved = match self.knowledge.retrieve(
            &query,
            self.config.retrieval.k,
            self.config.retrieval.n,
            FineOptions { column_filter: self.config.retrieval.column_filter },
        ) {
            Ok(r) => {
                warnings.extend(r.flags);
                r.hits.iter().map(|h| h.entry.render()).collect()
            }
            Err(e) => {
                tracing::warn!(error = %e, "knowledge retrieval failed");
                warnings.push("retrieval_failed".into());
                Vec::new()
            }
        };

        let query = if self.config.features.clarification {
            match clarify_intent(&query, &retrieved, gw)? {
                ClarifyOutcome::Rewritten(t) => t,
                ClarifyOutcome::NeedsUser(request) => {
                    let streak = open_streak(state);
                    if streak >= self.config.max_clarify_rounds as usize {
                        return Err(Error::ClarificationExhausted(self.config.max_clarify_rounds));
                    }
                    let mut r = MessageResponse::new(ReplyKind::Clarify, request.question_text.clone());
                    r.options = Some(request.options.clone());
                    r.allows_free_text = Some(request.allows_free_text);
                    state.pending_clarification =
                        Some(PendingClarification { request, base_text: query, rounds: streak as u32 + 1 });
                    return Ok(r);
                }
            }
        } else {
            query
        };
        turn.rewritten_text = Some(query.clone());

        let selection = self.tables.select_tables(&query, &self.config.scoring, gw, &[])?;
        if selection.keywords.degraded {
            warnings.push("keywords_degraded".into());
        }
        let table_names = selection.table_names();
        let mut ctx = SqlContext::new(self.schema.restricted_to(&table_names));
        ctx.knowledge = retrieved.clone();
        ctx.demonstrations =
            match top_demonstrations(&query, &self.demonstrations, self.config.retrieval.demonstrations_k, gw) {
                Ok(d) => d,
                Err(e) => {
                    tracing::warn!(error = %e, "demonstration lookup failed");
                    warnings.push("demonstrations_skipped".into());
                    Vec::new()
                }
            };
        let generated = generate_sql(&query, &ctx, self.strategy, self.config.strategy.force_one_step, gw)?;

        let db = self.db.lock().expect("database lock poisoned");
        let result = db.query(&generated.sql_text)?;
        let mut r = MessageResponse::new(ReplyKind::Answer, format!("{} row(s)", result.rows.len()));
        r.warnings = generated.warnings.clone();
        if insight || wants_insight(&query) {
            let preparer = SqlPreparer { ctx: &ctx, db: &db, gateway: gw };
            let agent =
                InsightAgent { gateway: gw, tools: &self.tools, preparer: &preparer, max_steps: self.config.max_steps };
            let request = InsightRequest {
                user_text: query.clone(),
                base_sql: Some(generated.sql_text.clone()),
                base_rows: Some(result.clone()),
                session_id: state.session_id.clone(),
            };
            match agent.run(&request, &retrieved) {
                Ok(report) => r.insight = Some(report),
                Err(e) => {
                    tracing::warn!(error = %e, "insight failed");
                    r.warnings.push(format!("insight_failed: {}", e.code()));
                }
            }
        }
        drop(db);
        let ResultTable { columns, mut rows } = result;
        if rows.len() > self.config.max_rows {
            rows.truncate(self.config.max_rows);
            r.truncated = true;
        }
        r.columns = Some(columns);
        r.rows = Some(rows);
        r.sql = Some(generated.sql_text);
        r.sir = generated.sir;
        r.strategy = Some(generated.strategy);
        r.tables = table_names;
        Ok(r)
    }
}

impl AnswerEngine for Engine {
    fn open_session(&self, db_id: &str) -> Result<String> {
        if db_id != self.config.database {
            return Err(Error::Validation(format!("engine serves database `{}`, not `{db_id}`", self.config.database)));
        }
        self.create_session()
    }

    fn answer(&self, session_id: &str, question: &str) -> Result<Option<String>> {
        let r = self.handle_message(session_id, question, false)?;
        Ok(if r.kind == ReplyKind::Answer { r.sql } else { None })
    }
}
