//! Event-sourced session persistence: an append-only log of chat events per
//! session plus a snapshot of the folded state.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, EngineEvent, SessionId, SessionState};
use crate::orchestrator::{Feedback, MessageOptionSet, MessageRole};

/// Version tag carried by every serialized event and transcript.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChatPayload {
    StartChat,
    SubmitDraft { text: String },
    SelectOption { index: usize },
    SubmitContinue { text: String },
    BluntTriggerIssued { text: String },
    CharacterReplied { text: String, role: MessageRole },
    OptionsPresented { option_set: MessageOptionSet },
    FeedbackPresented { feedback: Feedback },
    ContinuePrompt { prefilled_text: String },
    SessionCompleted,
    ErrorNotice { code: String, message: String },
}

impl ChatPayload {
    /// The engine event this payload records, if it changed session state.
    pub fn engine_event(&self) -> Option<EngineEvent> {
        Some(match self {
            ChatPayload::StartChat => EngineEvent::StartChat,
            ChatPayload::SubmitDraft { text } => EngineEvent::SubmitDraft { text: text.clone() },
            ChatPayload::SelectOption { index } => EngineEvent::SelectOption { index: *index },
            ChatPayload::SubmitContinue { text } => EngineEvent::SubmitContinue { text: text.clone() },
            ChatPayload::BluntTriggerIssued { text } => {
                EngineEvent::BluntTriggerIssued { text: text.clone() }
            }
            ChatPayload::CharacterReplied { text, .. } => {
                EngineEvent::CharacterReplied { text: text.clone() }
            }
            ChatPayload::OptionsPresented { option_set } => EngineEvent::PresentOptions {
                option_set: option_set.clone(),
            },
            ChatPayload::FeedbackPresented { feedback } => EngineEvent::FeedbackIssued {
                feedback: feedback.clone(),
            },
            ChatPayload::ContinuePrompt { .. }
            | ChatPayload::SessionCompleted
            | ChatPayload::ErrorNotice { .. } => return None,
        })
    }

    /// Payload recording `event`. `role` is the role the engine gave a
    /// character reply.
    pub fn from_engine(event: &EngineEvent, role: Option<MessageRole>) -> Self {
        match event {
            EngineEvent::StartChat => ChatPayload::StartChat,
            EngineEvent::SubmitDraft { text } => ChatPayload::SubmitDraft { text: text.clone() },
            EngineEvent::SelectOption { index } => ChatPayload::SelectOption { index: *index },
            EngineEvent::SubmitContinue { text } => ChatPayload::SubmitContinue { text: text.clone() },
            EngineEvent::BluntTriggerIssued { text } => {
                ChatPayload::BluntTriggerIssued { text: text.clone() }
            }
            EngineEvent::CharacterReplied { text } => ChatPayload::CharacterReplied {
                text: text.clone(),
                role: role.unwrap_or(MessageRole::NormalReply),
            },
            EngineEvent::PresentOptions { option_set } => ChatPayload::OptionsPresented {
                option_set: option_set.clone(),
            },
            EngineEvent::FeedbackIssued { feedback } => ChatPayload::FeedbackPresented {
                feedback: feedback.clone(),
            },
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ChatPayload::StartChat => "start_chat",
            ChatPayload::SubmitDraft { .. } => "submit_draft",
            ChatPayload::SelectOption { .. } => "select_option",
            ChatPayload::SubmitContinue { .. } => "submit_continue",
            ChatPayload::BluntTriggerIssued { .. } => "blunt_trigger_issued",
            ChatPayload::CharacterReplied { .. } => "character_replied",
            ChatPayload::OptionsPresented { .. } => "options_presented",
            ChatPayload::FeedbackPresented { .. } => "feedback_presented",
            ChatPayload::ContinuePrompt { .. } => "continue_prompt",
            ChatPayload::SessionCompleted => "session_completed",
            ChatPayload::ErrorNotice { .. } => "error_notice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatEvent {
    /// Dense per session, starting at 1.
    pub event_id: u64,
    pub session_id: SessionId,
    pub timestamp: DateTime<Utc>,
    pub payload: ChatPayload,
}

/// What produced a session, for audit and reproduction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigFingerprint {
    pub primary_model: Option<String>,
    pub emoji_model: Option<String>,
    pub stub_mode: bool,
    pub seed: u64,
    pub content_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub schema_version: u32,
    pub session_id: SessionId,
    pub created_at: DateTime<Utc>,
    pub fingerprint: ConfigFingerprint,
    /// State right after registration, before any event.
    pub initial: SessionState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Last event folded into `state`; 0 for none.
    pub through_event_id: u64,
    pub state: SessionState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub meta: SessionMeta,
    pub events: Vec<ChatEvent>,
    pub snapshot: Snapshot,
}

impl SessionRecord {
    pub fn new(meta: SessionMeta) -> Self {
        let snapshot = Snapshot {
            through_event_id: 0,
            state: meta.initial.clone(),
        };
        Self {
            meta,
            events: Vec::new(),
            snapshot,
        }
    }

    pub fn last_event_id(&self) -> u64 {
        self.events.last().map_or(0, |e| e.event_id)
    }

    /// State reached by replaying the whole log from the initial state.
    pub fn replay(&self) -> Result<SessionState, EngineError> {
        fold(&self.meta.initial, &self.events)
    }
}

/// Applies every state-changing event in `events` to `initial`.
pub fn fold(initial: &SessionState, events: &[ChatEvent]) -> Result<SessionState, EngineError> {
    let mut state = initial.clone();
    for event in events {
        if let Some(e) = event.payload.engine_event() {
            state.apply(&e)?;
        }
    }
    Ok(state)
}

/// Canonical bytes of a state, used to compare folds with snapshots.
pub fn canonical_bytes(state: &SessionState) -> Vec<u8> {
    serde_json::to_vec(state).expect("session state serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("stale event: expected id {expected}, got {got}")]
    StaleEvent { expected: u64, got: u64 },
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("stored session {session} is corrupt: {detail}")]
    Corrupt { session: String, detail: String },
}

fn unavailable(e: impl std::fmt::Display) -> StoreError {
    StoreError::StorageUnavailable(e.to_string())
}

/// Key-value style session storage. Implementations must allow concurrent
/// appends to distinct sessions.
pub trait SessionStore: Send + Sync {
    fn create(&self, meta: &SessionMeta) -> Result<(), StoreError>;

    /// Durably appends `event`; its id must be one past the last stored id.
    fn append(&self, event: &ChatEvent) -> Result<(), StoreError>;

    fn save_snapshot(&self, id: &SessionId, snapshot: &Snapshot) -> Result<(), StoreError>;

    fn load(&self, id: &SessionId) -> Result<SessionRecord, StoreError>;

    fn list(&self) -> Result<Vec<SessionId>, StoreError>;
}

fn check_next(last: u64, event: &ChatEvent) -> Result<(), StoreError> {
    if event.event_id != last + 1 {
        return Err(StoreError::StaleEvent {
            expected: last + 1,
            got: event.event_id,
        });
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<SessionId, SessionRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn create(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        let mut sessions = self.sessions.lock().map_err(unavailable)?;
        if sessions.contains_key(&meta.session_id) {
            return Err(StoreError::AlreadyExists(meta.session_id.to_string()));
        }
        sessions.insert(meta.session_id.clone(), SessionRecord::new(meta.clone()));
        Ok(())
    }

    fn append(&self, event: &ChatEvent) -> Result<(), StoreError> {
        let mut sessions = self.sessions.lock().map_err(unavailable)?;
        let record = sessions
            .get_mut(&event.session_id)
            .ok_or_else(|| StoreError::UnknownSession(event.session_id.to_string()))?;
        check_next(record.last_event_id(), event)?;
        record.events.push(event.clone());
        Ok(())
    }

    fn save_snapshot(&self, id: &SessionId, snapshot: &Snapshot) -> Result<(), StoreError> {
        let mut sessions = self.sessions.lock().map_err(unavailable)?;
        let record = sessions
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        record.snapshot = snapshot.clone();
        Ok(())
    }

    fn load(&self, id: &SessionId) -> Result<SessionRecord, StoreError> {
        let sessions = self.sessions.lock().map_err(unavailable)?;
        sessions
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))
    }

    fn list(&self) -> Result<Vec<SessionId>, StoreError> {
        let sessions = self.sessions.lock().map_err(unavailable)?;
        let mut ids: Vec<_> = sessions.keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

const META: &str = "meta.json";
const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

/// On-disk store. Each session is a directory holding `meta.json`, an
/// append-only `events.jsonl` (one event per line, fsynced per append) and
/// `snapshot.json` (replaced atomically).
///
/// Loading repairs what a crash can leave behind: a torn final log line is
/// cut off and a snapshot that lags the log is rebuilt by replay.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    // last appended id per session, guarded per session
    cursors: Mutex<HashMap<SessionId, Arc<Mutex<Option<u64>>>>>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(unavailable)?;
        Ok(Self {
            root,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &SessionId) -> Result<PathBuf, StoreError> {
        let s = id.as_str();
        let safe = !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !safe {
            return Err(StoreError::UnknownSession(s.to_string()));
        }
        Ok(self.root.join(s))
    }

    fn cursor(&self, id: &SessionId) -> Result<Arc<Mutex<Option<u64>>>, StoreError> {
        let mut cursors = self.cursors.lock().map_err(unavailable)?;
        Ok(cursors.entry(id.clone()).or_default().clone())
    }

    fn session_dir(&self, id: &SessionId) -> Result<PathBuf, StoreError> {
        let dir = self.dir(id)?;
        if !dir.join(META).is_file() {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        Ok(dir)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(unavailable)?;
    f.write_all(bytes).map_err(unavailable)?;
    f.sync_all().map_err(unavailable)?;
    fs::rename(&tmp, path).map_err(unavailable)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, id: &SessionId) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(unavailable)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        session: id.to_string(),
        detail: format!("{}: {e}", path.display()),
    })
}

/// Reads the log, cutting off a torn final line. A bad line anywhere else is
/// corruption.
fn read_log(path: &Path, id: &SessionId) -> Result<Vec<ChatEvent>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(unavailable(e)),
    };
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(unavailable)?;
        if n == 0 {
            break;
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<ChatEvent>(line.trim_end()) {
            Ok(event) if complete => {
                events.push(event);
                good_len += n as u64;
            }
            _ if !complete => {
                tracing::warn!(session = %id, "truncating torn log tail");
                let f = OpenOptions::new().write(true).open(path).map_err(unavailable)?;
                f.set_len(good_len).map_err(unavailable)?;
                f.sync_all().map_err(unavailable)?;
                break;
            }
            Ok(_) => unreachable!("complete lines are handled above"),
            Err(e) => {
                return Err(StoreError::Corrupt {
                    session: id.to_string(),
                    detail: format!("event log line {}: {e}", events.len() + 1),
                })
            }
        }
    }
    for (i, e) in events.iter().enumerate() {
        if e.event_id != i as u64 + 1 {
            return Err(StoreError::Corrupt {
                session: id.to_string(),
                detail: format!("event ids not dense at position {}", i + 1),
            });
        }
    }
    Ok(events)
}

impl SessionStore for FileStore {
    fn create(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        let dir = self.dir(&meta.session_id)?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::AlreadyExists(meta.session_id.to_string()))
            }
            Err(e) => return Err(unavailable(e)),
        }
        File::create(dir.join(EVENTS)).map_err(unavailable)?;
        let snapshot = Snapshot {
            through_event_id: 0,
            state: meta.initial.clone(),
        };
        write_atomic(
            &dir.join(SNAPSHOT),
            &serde_json::to_vec(&snapshot).map_err(unavailable)?,
        )?;
        // meta last: its presence marks the session as created
        write_atomic(&dir.join(META), &serde_json::to_vec_pretty(meta).map_err(unavailable)?)?;
        *self.cursor(&meta.session_id)?.lock().map_err(unavailable)? = Some(0);
        Ok(())
    }

    fn append(&self, event: &ChatEvent) -> Result<(), StoreError> {
        let id = &event.session_id;
        let dir = self.session_dir(id)?;
        let cursor = self.cursor(id)?;
        let mut last = cursor.lock().map_err(unavailable)?;
        let known = match *last {
            Some(n) => n,
            None => read_log(&dir.join(EVENTS), id)?.last().map_or(0, |e| e.event_id),
        };
        check_next(known, event)?;
        let mut line = serde_json::to_vec(event).map_err(unavailable)?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.join(EVENTS))
            .map_err(unavailable)?;
        f.write_all(&line).map_err(unavailable)?;
        f.sync_data().map_err(unavailable)?;
        *last = Some(event.event_id);
        Ok(())
    }

    fn save_snapshot(&self, id: &SessionId, snapshot: &Snapshot) -> Result<(), StoreError> {
        let dir = self.session_dir(id)?;
        write_atomic(
            &dir.join(SNAPSHOT),
            &serde_json::to_vec(snapshot).map_err(unavailable)?,
        )
    }

    fn load(&self, id: &SessionId) -> Result<SessionRecord, StoreError> {
        let dir = self.session_dir(id)?;
        let cursor = self.cursor(id)?;
        let mut last = cursor.lock().map_err(unavailable)?;
        let meta: SessionMeta = read_json(&dir.join(META), id)?;
        let events = read_log(&dir.join(EVENTS), id)?;
        let last_id = events.last().map_or(0, |e| e.event_id);
        let stored: Option<Snapshot> = read_json(&dir.join(SNAPSHOT), id).ok();
        let mut record = SessionRecord::new(meta);
        record.events = events;
        match stored {
            Some(s) if s.through_event_id == last_id => record.snapshot = s,
            _ => {
                tracing::info!(session = %id, "rebuilding snapshot from the event log");
                let state = record.replay().map_err(|e| StoreError::Corrupt {
                    session: id.to_string(),
                    detail: format!("log does not replay: {e}"),
                })?;
                record.snapshot = Snapshot {
                    through_event_id: last_id,
                    state,
                };
                write_atomic(
                    &dir.join(SNAPSHOT),
                    &serde_json::to_vec(&record.snapshot).map_err(unavailable)?,
                )?;
            }
        }
        *last = Some(last_id);
        Ok(record)
    }

    fn list(&self) -> Result<Vec<SessionId>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(unavailable)? {
            let entry = entry.map_err(unavailable)?;
            if entry.path().join(META).is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(SessionId::new(name));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
