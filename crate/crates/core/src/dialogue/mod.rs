//! Multi-round dialogue with querying.
//!
//! A user message is checked for a metric and a dimension, completed from the
//! most recent self-contained turn when either is missing, classified into
//! one of three intents, and then either refined against domain knowledge or
//! turned into a clarification question for the user.

mod session;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway};
use crate::reply::{parse_json, strip_fence};
use crate::{Error, Result};

pub(crate) use session::check_session_id;
pub use session::{load_transcript, now_millis, parse_transcript, SessionState, SessionStore};

/// Intent of a (completed) query: 0 non-BI, 1 incomplete BI, 2 complete BI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct IntentClass(u8);

impl IntentClass {
    pub const NON_BI: Self = Self(0);
    pub const INCOMPLETE: Self = Self(1);
    pub const COMPLETE: Self = Self(2);

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for IntentClass {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0..=2 => Ok(Self(v)),
            _ => Err(Error::Classification(format!("intent {v} is outside 0..=2"))),
        }
    }
}

impl From<IntentClass> for u8 {
    fn from(i: IntentClass) -> u8 {
        i.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Answer,
    Clarify,
    AskMissing,
    Reject,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub turn_id: u32,
    pub user_text: String,
    #[serde(default)]
    pub detected_metrics: Vec<String>,
    #[serde(default)]
    pub detected_dimensions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentClass>,
    pub system_reply_kind: ReplyKind,
    /// Query after knowledge-guided refinement, when it ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
}

impl DialogueTurn {
    pub fn new(turn_id: u32, user_text: &str) -> Self {
        Self {
            turn_id,
            user_text: user_text.to_string(),
            detected_metrics: Vec::new(),
            detected_dimensions: Vec::new(),
            completed_text: None,
            intent: None,
            system_reply_kind: ReplyKind::None,
            rewritten_text: None,
            sql: None,
        }
    }

    /// Completed text when present, else the raw user text.
    pub fn effective_text(&self) -> &str {
        self.completed_text.as_deref().unwrap_or(&self.user_text)
    }

    pub fn is_self_contained(&self) -> bool {
        !self.detected_metrics.is_empty() && !self.detected_dimensions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationOption {
    pub option_id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationRequest {
    pub question_text: String,
    pub options: Vec<ClarificationOption>,
    pub allows_free_text: bool,
}

impl ClarificationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.options.is_empty() && !self.allows_free_text {
            return Err(Error::Validation("clarification offers no options and no free text".into()));
        }
        Ok(())
    }

    /// Option whose id or label equals `answer`, ignoring case and surrounding space.
    pub fn matching_option(&self, answer: &str) -> Option<&ClarificationOption> {
        let a = answer.trim();
        self.options.iter().find(|o| o.option_id.eq_ignore_ascii_case(a) || o.label.eq_ignore_ascii_case(a))
    }
}

/// A clarification awaiting the user's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingClarification {
    pub request: ClarificationRequest,
    /// The query the clarification was raised for.
    pub base_text: String,
    /// Clarification requests issued so far for `base_text`.
    pub rounds: u32,
}

impl PendingClarification {
    /// Folds the user's answer into the base query. `None` means the answer is
    /// neither an option nor admissible free text.
    pub fn merge_answer(&self, answer: &str) -> Option<String> {
        let chosen = match self.request.matching_option(answer) {
            Some(o) => o.label.clone(),
            None if self.request.allows_free_text && !answer.trim().is_empty() => answer.trim().to_string(),
            None => return None,
        };
        Some(format!("{} [clarified: {}]", self.base_text, chosen))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assessment {
    pub metrics: Vec<String>,
    pub dimensions: Vec<String>,
    pub complete: bool,
}

impl Assessment {
    pub fn new(metrics: Vec<String>, dimensions: Vec<String>) -> Self {
        let complete = !metrics.is_empty() && !dimensions.is_empty();
        Self { metrics, dimensions, complete }
    }
}

pub fn assess_integrity(text: &str, gateway: &Gateway) -> Result<Assessment> {
    #[derive(Deserialize)]
    struct Reply {
        #[serde(default)]
        metrics: Vec<String>,
        #[serde(default)]
        dimensions: Vec<String>,
    }
    if text.trim().is_empty() {
        return Err(Error::Validation("message text must not be empty".into()));
    }
    let req = ChatRequest::new("integrity_assess").system(crate::prompts::INTEGRITY).user(text);
    let raw = gateway.chat_text(&req)?;
    let r: Reply = parse_json(&raw).ok_or_else(|| Error::reply_parse("integrity assessment", raw.clone()))?;
    let clean = |v: Vec<String>| v.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    Ok(Assessment::new(clean(r.metrics), clean(r.dimensions)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Turn the missing elements were taken from.
    pub source_turn: Option<u32>,
    pub metrics: Vec<String>,
    pub dimensions: Vec<String>,
    pub flags: Vec<String>,
}

fn union(a: &[String], b: &[String]) -> Vec<String> {
    let mut out = a.to_vec();
    for x in b {
        if !out.iter().any(|y| y.eq_ignore_ascii_case(x)) {
            out.push(x.clone());
        }
    }
    out
}

/// Completes an incomplete query from the newest self-contained turn.
pub fn complete_from_history(
    text: &str,
    assessment: &Assessment,
    session: &SessionState,
    gateway: &Gateway,
) -> Result<Completion> {
    let unchanged = |flags: Vec<String>| Completion {
        text: text.to_string(),
        source_turn: None,
        metrics: assessment.metrics.clone(),
        dimensions: assessment.dimensions.clone(),
        flags,
    };
    if assessment.complete {
        return Ok(unchanged(Vec::new()));
    }
    let Some(source) = session.turns.iter().rev().find(|t| t.is_self_contained()) else {
        return Ok(unchanged(vec!["no_history_found".to_string()]));
    };
    let req = ChatRequest::new("history_complete")
        .system(format!("{}\nPrevious question: {}", crate::prompts::HISTORY_COMPLETE, source.effective_text()))
        .user(text);
    let raw = gateway.chat_text(&req)?;
    let mut merged = strip_fence(&raw).trim().to_string();
    if merged.is_empty() {
        return Err(Error::reply_parse("history completion", raw));
    }
    if merged.starts_with('"') && merged.ends_with('"') && merged.len() >= 2 {
        merged = merged[1..merged.len() - 1].to_string();
    }
    Ok(Completion {
        text: merged,
        source_turn: Some(source.turn_id),
        metrics: union(&assessment.metrics, &source.detected_metrics),
        dimensions: union(&assessment.dimensions, &source.detected_dimensions),
        flags: Vec::new(),
    })
}

/// Parses a single-digit intent reply; anything else is an error.
pub fn parse_intent(raw: &str) -> Result<IntentClass> {
    let t = strip_fence(raw).trim().trim_end_matches('.').trim();
    match t {
        "0" => Ok(IntentClass::NON_BI),
        "1" => Ok(IntentClass::INCOMPLETE),
        "2" => Ok(IntentClass::COMPLETE),
        _ => Err(Error::Classification(format!("unrecognised intent reply `{raw}`"))),
    }
}

pub fn classify_intent(text: &str, gateway: &Gateway) -> Result<IntentClass> {
    if text.trim().is_empty() {
        return Err(Error::Validation("text to classify must not be empty".into()));
    }
    let req = ChatRequest::new("intent_classify").system(crate::prompts::INTENT).user(text);
    parse_intent(&gateway.chat_text(&req)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "message", rename_all = "snake_case")]
pub enum Action {
    Proceed,
    AskMissing(String),
    Reject(String),
}

pub const REJECT_MESSAGE: &str = "Sorry, I can only help with questions about your business data. \
Please ask about a metric, for example sales or revenue, broken down by a dimension such as time or region.";

pub const ASK_MISSING_MESSAGE: &str = "Your question is missing some information. Please state \
the metric you want to see and the dimension to break it down by, for example a time period or region.";

/// Consecutive ask-missing replies after which an incomplete query is declined.
pub const MAX_ASK_MISSING: usize = 2;

pub fn route_intent(intent: IntentClass, session: &SessionState) -> Action {
    match intent.value() {
        0 => Action::Reject(REJECT_MESSAGE.to_string()),
        1 if session.trailing_ask_missing() >= MAX_ASK_MISSING => Action::Reject(REJECT_MESSAGE.to_string()),
        1 => Action::AskMissing(ASK_MISSING_MESSAGE.to_string()),
        _ => Action::Proceed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarifyOutcome {
    Rewritten(String),
    NeedsUser(ClarificationRequest),
}

pub fn parse_clarify_reply(raw: &str) -> Result<ClarifyOutcome> {
    #[derive(Deserialize)]
    struct WireOption {
        id: String,
        label: String,
        #[serde(default)]
        description: String,
    }
    #[derive(Deserialize)]
    struct WireClarify {
        question: String,
        #[serde(default)]
        options: Vec<WireOption>,
        #[serde(default)]
        allow_free_text: bool,
    }
    #[derive(Deserialize)]
    struct Reply {
        rewritten: Option<String>,
        clarify: Option<WireClarify>,
    }
    let r: Reply = parse_json(raw).ok_or_else(|| Error::reply_parse("clarification", raw))?;
    match (r.rewritten, r.clarify) {
        (_, Some(c)) => {
            let req = ClarificationRequest {
                question_text: c.question,
                options: c
                    .options
                    .into_iter()
                    .map(|o| ClarificationOption { option_id: o.id, label: o.label, description: o.description })
                    .collect(),
                allows_free_text: c.allow_free_text,
            };
            req.validate().map_err(|_| Error::reply_parse("clarification", raw))?;
            Ok(ClarifyOutcome::NeedsUser(req))
        }
        (Some(t), None) if !t.trim().is_empty() => Ok(ClarifyOutcome::Rewritten(t.trim().to_string())),
        _ => Err(Error::reply_parse("clarification", raw)),
    }
}

/// Refines `text` with rendered knowledge, or asks the user to disambiguate.
pub fn clarify_intent(text: &str, knowledge: &[String], gateway: &Gateway) -> Result<ClarifyOutcome> {
    let req = ChatRequest::new("intent_clarify")
        .system(format!("{}\nDomain knowledge:\n{}", crate::prompts::CLARIFY, knowledge.join("\n")))
        .user(text);
    parse_clarify_reply(&gateway.chat_text(&req)?)
}
