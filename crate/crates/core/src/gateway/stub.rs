//! Scripted stub provider.
//!
//! A script is an ordered rule list. A rule matches when its tag pattern
//! matches the request tag and its `contains` substring occurs in the last
//! user message. The first matching rule wins; otherwise the default is
//! returned, and with no default the call fails with a stub miss.
//!
//! In a response, `{{input}}` is replaced by the last user message escaped
//! as JSON string content, so it can be spliced into JSON replies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ChatRequest;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubScript {
    #[serde(default)]
    pub rules: Vec<StubRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubRule {
    /// Exact tag, `*` for any tag, or a prefix pattern ending in `*`.
    #[serde(default = "any_tag")]
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
}

const INPUT_SLOT: &str = "{{input}}";

fn any_tag() -> String {
    "*".to_string()
}

impl StubRule {
    pub fn new(tag: &str, contains: Option<&str>, response: &str) -> Self {
        Self { tag: tag.to_string(), contains: contains.map(str::to_string), response: response.to_string() }
    }

    fn matches(&self, tag: &str, input: &str) -> bool {
        let tag_ok = match self.tag.strip_suffix('*') {
            Some(prefix) => tag.starts_with(prefix),
            None => self.tag == tag,
        };
        tag_ok && self.contains.as_deref().is_none_or(|c| input.contains(c))
    }
}

impl StubScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a rule; later rules only apply when earlier ones miss.
    pub fn rule(mut self, tag: &str, contains: Option<&str>, response: &str) -> Self {
        self.rules.push(StubRule::new(tag, contains, response));
        self
    }

    pub fn with_default(mut self, response: &str) -> Self {
        self.default = Some(response.to_string());
        self
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn respond(&self, request: &ChatRequest) -> Result<String> {
        let input = request.last_user_text();
        let response = self
            .rules
            .iter()
            .find(|r| r.matches(&request.tag, input))
            .map(|r| r.response.as_str())
            .or(self.default.as_deref())
            .ok_or_else(|| Error::StubMiss { tag: request.tag.clone() })?;
        if !response.contains(INPUT_SLOT) {
            return Ok(response.to_string());
        }
        let quoted = serde_json::to_string(input)?;
        Ok(response.replace(INPUT_SLOT, &quoted[1..quoted.len() - 1]))
    }
}
