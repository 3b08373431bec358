//! Uniform access to chat-completion, embedding and re-ranking providers.
//!
//! Every model call in the engine goes through a [`Gateway`]. Each role
//! (chat, embed, rerank, judge, one-step endpoint) is backed by a
//! [`Provider`], which is either an HTTP client or a [`StubScript`].

mod embed;
mod http;
mod stub;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub(crate) use embed::cosine_slices;
pub use embed::{
    char_trigrams, cosine, hash_embed, mean, trigram_hash, EmbeddingVector, DEFAULT_DIM, PAD_END, PAD_START,
    STUB_HASH_SEED,
};
pub use http::HttpProvider;
pub use stub::{StubRule, StubScript};

use crate::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Names the calling pipeline stage, e.g. `intent_classify`.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: &str) -> Self {
        Self {
            messages: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            tag: tag.to_string(),
        }
    }

    pub fn system(self, content: impl Into<String>) -> Self {
        self.message(Role::System, content)
    }

    pub fn user(self, content: impl Into<String>) -> Self {
        self.message(Role::User, content)
    }

    pub fn assistant(self, content: impl Into<String>) -> Self {
        self.message(Role::Assistant, content)
    }

    fn message(mut self, role: Role, content: impl Into<String>) -> Self {
        self.messages.push(ChatMessage { role, content: content.into() });
        self
    }

    pub fn last_user_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        match self.messages.last() {
            None => Err(Error::Validation("chat request has no messages".into())),
            Some(m) if m.role != Role::User => Err(Error::Validation("last chat message must have role user".into())),
            _ if !(0.0..=1.0).contains(&self.temperature) => {
                Err(Error::Validation(format!("temperature {} outside [0, 1]", self.temperature)))
            }
            _ if self.max_tokens == 0 => Err(Error::Validation("max_tokens must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Path to a stub script JSON file (stub kind only).
    #[serde(default)]
    pub stub_script: Option<PathBuf>,
    /// Embedding dimension for the stub hashing embedder.
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_dim() -> usize {
    DEFAULT_DIM
}

impl ProviderConfig {
    pub fn stub(script: impl Into<PathBuf>) -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: None,
            model: None,
            auth_token: None,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            stub_script: Some(script.into()),
            dim: DEFAULT_DIM,
        }
    }

    pub fn http(endpoint: &str) -> Self {
        Self { kind: ProviderKind::Http, endpoint: Some(endpoint.to_string()), stub_script: None, ..Self::stub("") }
    }

    /// Returns every invalid field as `prefix.field: message`.
    pub fn problems(&self, prefix: &str, base_dir: &Path) -> Vec<String> {
        let mut out = Vec::new();
        if self.timeout_ms == 0 {
            out.push(format!("{prefix}.timeout_ms: must be > 0"));
        }
        if self.dim == 0 {
            out.push(format!("{prefix}.dim: must be > 0"));
        }
        match self.kind {
            ProviderKind::Stub => match &self.stub_script {
                None => out.push(format!("{prefix}.stub_script: required for kind = stub")),
                Some(p) if !base_dir.join(p).is_file() => {
                    out.push(format!("{prefix}.stub_script: file {} not found", p.display()))
                }
                _ => {}
            },
            ProviderKind::Http => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    out.push(format!("{prefix}.endpoint: required for kind = http"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Stub { script: StubScript, dim: usize },
    Http(HttpProvider),
}

/// One configured model backend.
#[derive(Debug, Clone)]
pub struct Provider {
    backend: Backend,
}

impl Provider {
    pub fn stub(script: StubScript) -> Self {
        Self::stub_with_dim(script, DEFAULT_DIM)
    }

    pub fn stub_with_dim(script: StubScript, dim: usize) -> Self {
        Self { backend: Backend::Stub { script, dim } }
    }

    pub fn http(provider: HttpProvider) -> Self {
        Self { backend: Backend::Http(provider) }
    }

    /// Builds a provider; relative stub paths resolve against `base_dir`.
    pub fn from_config(config: &ProviderConfig, base_dir: &Path) -> Result<Self> {
        let problems = config.problems("provider", base_dir);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(match config.kind {
            ProviderKind::Stub => {
                let path = base_dir.join(config.stub_script.as_ref().expect("checked above"));
                Self::stub_with_dim(StubScript::load(&path)?, config.dim)
            }
            ProviderKind::Http => Self::http(HttpProvider::new(config)),
        })
    }

    pub fn is_stub(&self) -> bool {
        matches!(self.backend, Backend::Stub { .. })
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        match &self.backend {
            Backend::Stub { script, .. } => {
                let text = script.respond(request)?;
                let finish_reason = if text.is_empty() { FinishReason::Error } else { FinishReason::Stop };
                Ok(ChatResponse { text, finish_reason })
            }
            Backend::Http(h) => h.chat(request),
        }
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Validation("embed: empty input list".into()));
        }
        match &self.backend {
            Backend::Stub { dim, .. } => Ok(texts.iter().map(|t| hash_embed(t, *dim)).collect()),
            Backend::Http(h) => h.embed(texts),
        }
    }

    /// Scores candidates against `query`; descending, ties by input index.
    pub fn rerank(&self, query: &str, candidates: &[String]) -> Result<Vec<(usize, f64)>> {
        if candidates.is_empty() {
            return Err(Error::Validation("rerank: empty candidate list".into()));
        }
        let mut scored = match &self.backend {
            Backend::Stub { dim, .. } => {
                let q = hash_embed(query, *dim);
                candidates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, cosine_slices(&q.values, &hash_embed(c, *dim).values)))
                    .collect()
            }
            Backend::Http(h) => h.rerank(query, candidates)?,
        };
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }
}

/// Providers for each model role used by the engine.
#[derive(Debug, Clone)]
pub struct Gateway {
    pub chat: Provider,
    pub embed: Provider,
    pub rerank: Provider,
    pub judge: Provider,
    /// Fine-tuned one-step SQL endpoint, when deployed.
    pub one_step: Option<Provider>,
}

impl Gateway {
    /// All roles served by the same stub script; no one-step endpoint.
    pub fn stub(script: StubScript) -> Self {
        let p = Provider::stub(script);
        Self { chat: p.clone(), embed: p.clone(), rerank: p.clone(), judge: p, one_step: None }
    }

    pub fn with_one_step(mut self, provider: Provider) -> Self {
        self.one_step = Some(provider);
        self
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.chat.chat(request)
    }

    /// Chat call that only returns text of a successful completion.
    pub fn chat_text(&self, request: &ChatRequest) -> Result<String> {
        completion_text(self.chat.chat(request)?)
    }

    pub fn judge_text(&self, request: &ChatRequest) -> Result<String> {
        completion_text(self.judge.chat(request)?)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.embed.embed(texts)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed.embed(&[text.to_string()])?.remove(0))
    }

    pub fn rerank(&self, query: &str, candidates: &[String]) -> Result<Vec<(usize, f64)>> {
        self.rerank.rerank(query, candidates)
    }
}

pub(crate) fn completion_text(resp: ChatResponse) -> Result<String> {
    match resp.finish_reason {
        FinishReason::Error => Err(Error::Transport("provider returned an error completion".into())),
        _ => Ok(resp.text),
    }
}
