use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{DialogueTurn, PendingClarification, ReplyKind};
use crate::{Error, Result};

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub turns: Vec<DialogueTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_clarification: Option<PendingClarification>,
    pub created_at: u64,
    pub updated_at: u64,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        let now = now_millis();
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            pending_clarification: None,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn next_turn_id(&self) -> u32 {
        self.turns.last().map_or(1, |t| t.turn_id + 1)
    }

    /// Appends a turn; ids must strictly increase.
    pub fn push_turn(&mut self, turn: DialogueTurn) -> Result<()> {
        if let Some(last) = self.turns.last() {
            if turn.turn_id <= last.turn_id {
                return Err(Error::Validation(format!("turn id {} does not follow {}", turn.turn_id, last.turn_id)));
            }
        }
        if turn.turn_id == 0 {
            return Err(Error::Validation("turn ids start at 1".into()));
        }
        self.turns.push(turn);
        self.updated_at = now_millis().max(self.updated_at);
        Ok(())
    }

    /// Number of consecutive ask-missing replies at the end of the transcript.
    pub fn trailing_ask_missing(&self) -> usize {
        self.turns.iter().rev().take_while(|t| t.system_reply_kind == ReplyKind::AskMissing).count()
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    session_id: String,
    #[serde(default)]
    pending_clarification: Option<PendingClarification>,
    created_at: u64,
    updated_at: u64,
}

/// Session persistence: `<id>.jsonl` holds one turn per line, `<id>.state.json`
/// the pending clarification and timestamps.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

pub(crate) fn check_session_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("invalid session id `{id}`")))
    }
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn transcript_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn state_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.state.json"))
    }

    pub fn save(&self, state: &SessionState) -> Result<()> {
        check_session_id(&state.session_id)?;
        let mut lines = String::new();
        for t in &state.turns {
            lines.push_str(&serde_json::to_string(t)?);
            lines.push('\n');
        }
        write_atomic(&self.transcript_path(&state.session_id), lines.as_bytes())?;
        let meta = StateFile {
            session_id: state.session_id.clone(),
            pending_clarification: state.pending_clarification.clone(),
            created_at: state.created_at,
            updated_at: state.updated_at,
        };
        write_atomic(&self.state_path(&state.session_id), serde_json::to_string_pretty(&meta)?.as_bytes())
    }

    pub fn load(&self, id: &str) -> Result<Option<SessionState>> {
        check_session_id(id)?;
        let tp = self.transcript_path(id);
        if !tp.is_file() {
            return Ok(None);
        }
        let turns = load_transcript(&tp)?;
        let mut state = SessionState::new(id);
        state.created_at = 0;
        state.updated_at = 0;
        let sp = self.state_path(id);
        if sp.is_file() {
            let meta: StateFile = serde_json::from_str(&std::fs::read_to_string(sp)?)?;
            state.pending_clarification = meta.pending_clarification;
            state.created_at = meta.created_at;
            state.updated_at = meta.updated_at;
        }
        let updated_at = state.updated_at;
        for t in turns {
            state.push_turn(t)?;
        }
        state.updated_at = updated_at;
        Ok(Some(state))
    }

    /// Ids of every persisted session, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for e in std::fs::read_dir(&self.dir)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".jsonl") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Reads a JSONL transcript; errors carry the 1-based line number.
pub fn load_transcript(path: &Path) -> Result<Vec<DialogueTurn>> {
    let text = std::fs::read_to_string(path)?;
    parse_transcript(&text)
}

pub fn parse_transcript(text: &str) -> Result<Vec<DialogueTurn>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Validation(format!("transcript line {}: {e}", i + 1))))
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
