use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Table,
    Column,
    Value,
    Term,
    Udf,
    Alias,
    Task,
    History,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Table => "table",
            Label::Column => "column",
            Label::Value => "value",
            Label::Term => "term",
            Label::Udf => "udf",
            Label::Alias => "alias",
            Label::Task => "task",
            Label::History => "history",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One knowledge item, optionally linked to a single ancestor by
/// `(anc_label, anc_name)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeEntry {
    pub id: String,
    pub label: Label,
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anc_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anc_name: Option<String>,
}

impl KnowledgeEntry {
    pub fn new(id: &str, label: Label, name: &str, description: &str) -> Self {
        Self {
            id: id.to_string(),
            label,
            name: name.to_string(),
            description: description.to_string(),
            demonstration: None,
            anc_label: None,
            anc_name: None,
        }
    }

    pub fn with_ancestor(mut self, label: Label, name: &str) -> Self {
        self.anc_label = Some(label);
        self.anc_name = Some(name.to_string());
        self
    }

    pub fn with_demonstration(mut self, demo: &str) -> Self {
        self.demonstration = Some(demo.to_string());
        self
    }

    pub fn ancestor(&self) -> Option<(Label, &str)> {
        match (self.anc_label, self.anc_name.as_deref()) {
            (Some(l), Some(n)) if !n.is_empty() => Some((l, n)),
            _ => None,
        }
    }

    /// Text indexed lexically: name, description and demonstration.
    pub fn lexical_text(&self) -> String {
        let mut s = format!("{} {}", self.name, self.description);
        if let Some(d) = &self.demonstration {
            s.push(' ');
            s.push_str(d);
        }
        s
    }

    /// Rendering passed to the re-ranker and to prompts.
    pub fn render(&self) -> String {
        match &self.demonstration {
            Some(d) => format!("[{}] {}: {} (e.g. {})", self.label, self.name, self.description, d),
            None => format!("[{}] {}: {}", self.label, self.name, self.description),
        }
    }

    fn problem(&self) -> Option<&'static str> {
        if self.id.trim().is_empty() {
            Some("empty id")
        } else if self.name.trim().is_empty() {
            Some("empty name")
        } else if self.anc_label.is_some() != self.anc_name.is_some() {
            Some("anc_label and anc_name must be set together")
        } else {
            None
        }
    }
}

/// Validates a batch, listing every offending id.
pub fn validate_entries(entries: &[KnowledgeEntry]) -> Result<()> {
    let bad: Vec<String> = entries.iter().filter_map(|e| e.problem().map(|p| format!("{} ({p})", e.id))).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("invalid knowledge entries: {}", bad.join(", "))))
    }
}

/// `(term, definition, demonstration)` view of a term entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTriplet {
    pub term: String,
    pub definition: String,
    pub demonstration: String,
}

impl KnowledgeTriplet {
    pub fn from_entry(entry: &KnowledgeEntry) -> Option<Self> {
        let t = Self {
            term: entry.name.clone(),
            definition: entry.description.clone(),
            demonstration: entry.demonstration.clone()?,
        };
        (!t.term.is_empty() && !t.definition.is_empty() && !t.demonstration.is_empty()).then_some(t)
    }
}

/// Parses a knowledge import file: one JSON entry per non-blank line.
pub fn parse_jsonl(text: &str) -> Result<Vec<KnowledgeEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Ingest(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Serializes entries as JSONL sorted by `(label, name)`.
pub fn export_jsonl(entries: &[KnowledgeEntry]) -> String {
    let mut sorted: Vec<&KnowledgeEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| (a.label, &a.name).cmp(&(b.label, &b.name)));
    let mut out = String::new();
    for e in sorted {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    out
}
