//! HTTP provider speaking chat-completion style JSON.
//!
//! - chat: `{model, messages[], temperature, max_tokens}` -> `choices[0].message.content`
//! - embed: `{model, input[]}` -> `data[i].embedding`
//! - rerank: `{model, query, documents[]}` -> `results[{index, relevance_score}]`

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, EmbeddingVector, FinishReason, ProviderConfig};
use crate::{Error, Result};

const BACKOFF: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    model: String,
    auth_token: Option<String>,
    timeout: Duration,
    retries: u32,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Self {
        Self {
            endpoint: config.endpoint.clone().unwrap_or_default(),
            model: config.model.clone().unwrap_or_default(),
            auth_token: config.auth_token.clone(),
            timeout: Duration::from_millis(config.timeout_ms.max(1)),
            retries: config.retries,
        }
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(self.timeout)).http_status_as_error(true).build().into();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(BACKOFF);
            }
            let mut req = agent.post(&self.endpoint);
            if let Some(token) = &self.auth_token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<Value>() {
                    Ok(v) => return Ok(v),
                    Err(e) => last = e.to_string(),
                },
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(attempt, error = %last, endpoint = %self.endpoint, "provider call failed");
        }
        Err(Error::Transport(format!("{} failed after {} attempts: {last}", self.endpoint, self.retries + 1)))
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let v = self.post(&body)?;
        let choice = &v["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::Transport(format!("malformed chat response: {v}")))?
            .to_string();
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            _ if text.is_empty() => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        Ok(ChatResponse { text, finish_reason })
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let v = self.post(&json!({ "model": self.model, "input": texts }))?;
        let data = v["data"]
            .as_array()
            .filter(|d| d.len() == texts.len())
            .ok_or_else(|| Error::Transport(format!("malformed embedding response: {v}")))?;
        data.iter()
            .map(|d| {
                let values = d["embedding"]
                    .as_array()
                    .ok_or_else(|| Error::Transport("embedding entry without vector".into()))?
                    .iter()
                    .map(|x| x.as_f64().filter(|f| f.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::Transport("non-numeric embedding value".into()))?;
                Ok(EmbeddingVector::normalized(values))
            })
            .collect()
    }

    pub fn rerank(&self, query: &str, candidates: &[String]) -> Result<Vec<(usize, f64)>> {
        let v = self.post(&json!({ "model": self.model, "query": query, "documents": candidates }))?;
        let results =
            v["results"].as_array().ok_or_else(|| Error::Transport(format!("malformed rerank response: {v}")))?;
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            let index = r["index"].as_u64().map(|i| i as usize).filter(|i| *i < candidates.len());
            let score = r["relevance_score"].as_f64();
            match (index, score) {
                (Some(i), Some(s)) => out.push((i, s)),
                _ => return Err(Error::Transport(format!("malformed rerank result: {r}"))),
            }
        }
        Ok(out)
    }
}
