use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("validation error: {0}")]
    Validation(String),

    /// One or more configuration fields are invalid. Each entry is `path: message`.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A referenced resource such as a session does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    #[error("transport error: {0}")]
    Transport(String),

    /// No stub rule matched and the script has no default response.
    #[error("stub miss: no rule matches tag `{tag}`")]
    StubMiss { tag: String },

    /// A model reply could not be parsed into the expected shape.
    #[error("could not parse {what} from reply: {raw:?}")]
    ReplyParse { what: &'static str, raw: String },

    #[error("intent classification error: reply {0:?} is not one of 0, 1, 2")]
    Classification(String),

    #[error("clarification exhausted after {0} rounds")]
    ClarificationExhausted(u32),

    #[error("no candidate tables matched the query")]
    NoCandidateTables,

    #[error("SQL generation failed: {}", .0.join("; "))]
    Generation(Vec<String>),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("unknown tool `{0}`")]
    ToolDispatch(String),

    /// Total metric change is zero, so contribution shares are undefined.
    /// Per-value deltas are still reported.
    #[error("contribution shares undefined: total delta is zero")]
    UndefinedShare { deltas: Vec<(String, f64)> },

    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable diagnostic code used in structured replies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::NotFound(_) => "not_found",
            Error::Transport(_) => "transport",
            Error::StubMiss { .. } => "stub_miss",
            Error::ReplyParse { .. } => "reply_parse",
            Error::Classification(_) => "classification",
            Error::ClarificationExhausted(_) => "clarification_exhausted",
            Error::NoCandidateTables => "no_candidate_tables",
            Error::Generation(_) => "generation",
            Error::Ingest(_) => "ingest",
            Error::ToolDispatch(_) => "tool_dispatch",
            Error::UndefinedShare { .. } => "undefined_share",
            Error::Database(_) => "database",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn reply_parse(what: &'static str, raw: impl Into<String>) -> Self {
        Error::ReplyParse { what, raw: raw.into() }
    }
}
