//! Runs a session end to end: applies user commands, asks the orchestrator
//! for whatever the engine needs next, and persists every resulting event
//! before the state that includes it is committed.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Directive, EngineError, EngineEvent, SessionId, SessionState, UserProfile};
use crate::orchestrator::{Orchestrator, OrchestratorError};
use crate::store::{
    ChatEvent, ChatPayload, ConfigFingerprint, SessionMeta, SessionRecord, SessionStore, Snapshot,
    StoreError, SCHEMA_VERSION,
};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Starts at a fixed instant and moves forward by a fixed step per reading.
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: TimeDelta) -> Self {
        Self {
            start,
            step_ms: step.num_milliseconds(),
            ticks: AtomicI64::new(0),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + TimeDelta::milliseconds(n * self.step_ms)
    }
}

/// What a client may ask of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientCommand {
    StartChat,
    SubmitDraft { text: String },
    SelectOption { index: usize },
    SubmitContinue { text: String },
    /// Re-run generation that previously failed.
    Retry,
}

impl ClientCommand {
    fn engine_event(&self) -> Option<EngineEvent> {
        Some(match self {
            ClientCommand::StartChat => EngineEvent::StartChat,
            ClientCommand::SubmitDraft { text } => EngineEvent::SubmitDraft { text: text.clone() },
            ClientCommand::SelectOption { index } => EngineEvent::SelectOption { index: *index },
            ClientCommand::SubmitContinue { text } => {
                EngineEvent::SubmitContinue { text: text.clone() }
            }
            ClientCommand::Retry => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

/// A loaded session: its state and the id of the last persisted event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveSession {
    pub state: SessionState,
    pub last_event_id: u64,
}

impl LiveSession {
    pub fn id(&self) -> &SessionId {
        &self.state.session_id
    }
}

pub struct SessionDriver {
    orchestrator: Arc<Orchestrator>,
    store: Arc<dyn SessionStore>,
    clock: Arc<dyn Clock>,
}

impl SessionDriver {
    pub fn new(orchestrator: Arc<Orchestrator>, store: Arc<dyn SessionStore>, clock: Arc<dyn Clock>) -> Self {
        Self {
            orchestrator,
            store,
            clock,
        }
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    pub fn store(&self) -> &dyn SessionStore {
        self.store.as_ref()
    }

    pub fn fingerprint(&self, seed: u64) -> ConfigFingerprint {
        let config = self.orchestrator.gateway().config();
        ConfigFingerprint {
            primary_model: config.primary.as_ref().map(|e| e.model.clone()),
            emoji_model: config.emoji.as_ref().map(|e| e.model.clone()),
            stub_mode: config.stub_mode,
            seed,
            content_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Registers a user: picks the character, generates the brief and
    /// persists the new session.
    pub fn create_session(
        &self,
        id: SessionId,
        profile: UserProfile,
        seed: u64,
    ) -> Result<LiveSession, DriverError> {
        profile.validate()?;
        let name = self.orchestrator.content().character_name(seed).to_string();
        let brief = self.orchestrator.generate_scenario(&profile, &name)?;
        let state = SessionState::new(id.clone(), profile, brief, name, seed)?;
        let meta = SessionMeta {
            schema_version: SCHEMA_VERSION,
            session_id: id,
            created_at: self.clock.now(),
            fingerprint: self.fingerprint(seed),
            initial: state.clone(),
        };
        self.store.create(&meta)?;
        Ok(LiveSession {
            state,
            last_event_id: 0,
        })
    }

    pub fn open(&self, id: &SessionId) -> Result<LiveSession, DriverError> {
        Ok(Self::live(self.store.load(id)?))
    }

    pub fn live(record: SessionRecord) -> LiveSession {
        LiveSession {
            last_event_id: record.snapshot.through_event_id,
            state: record.snapshot.state,
        }
    }

    /// Applies `command` and carries out everything it sets in motion.
    /// Engine rejections and generation failures become error notices in
    /// the log; only storage failures are returned as errors.
    pub fn handle(
        &self,
        live: &mut LiveSession,
        command: &ClientCommand,
        sink: &mut dyn FnMut(&ChatEvent),
    ) -> Result<(), DriverError> {
        let directives = match command.engine_event() {
            Some(event) => match self.commit(live, &event, sink) {
                Ok(directives) => directives,
                Err(DriverError::Engine(e)) => {
                    self.notice(live, "illegal_event", &e.to_string(), sink)?;
                    return Ok(());
                }
                Err(e) => return Err(e),
            },
            None => live.state.pending_directives(),
        };
        self.run(live, directives, sink)
    }

    /// Convenience wrapper around [`handle`](Self::handle) that collects the
    /// emitted events.
    pub fn handle_collect(
        &self,
        live: &mut LiveSession,
        command: &ClientCommand,
    ) -> Result<Vec<ChatEvent>, DriverError> {
        let mut out = Vec::new();
        self.handle(live, command, &mut |e| out.push(e.clone()))?;
        Ok(out)
    }

    fn run(
        &self,
        live: &mut LiveSession,
        mut queue: Vec<Directive>,
        sink: &mut dyn FnMut(&ChatEvent),
    ) -> Result<(), DriverError> {
        while !queue.is_empty() {
            let directive = queue.remove(0);
            match &directive {
                Directive::PromptContinue { prefilled, .. } => {
                    let payload = ChatPayload::ContinuePrompt {
                        prefilled_text: prefilled.clone(),
                    };
                    self.emit(live, payload, None, sink)?;
                }
                Directive::SessionCompleted => {
                    self.emit(live, ChatPayload::SessionCompleted, None, sink)?;
                }
                _ => loop {
                    let event = match self.orchestrator.next_event(&live.state, &directive) {
                        Ok(Some(event)) => event,
                        Ok(None) => break,
                        Err(e) => {
                            tracing::warn!(session = %live.id(), error = %e, "generation failed");
                            self.notice(live, e.code(), &e.to_string(), sink)?;
                            return Ok(());
                        }
                    };
                    let more = self.commit(live, &event, sink)?;
                    queue.extend(more);
                    if !live.state.pending_directives().contains(&directive) {
                        break;
                    }
                },
            }
        }
        Ok(())
    }

    /// Persists `event` and then adopts the state it leads to.
    fn commit(
        &self,
        live: &mut LiveSession,
        event: &EngineEvent,
        sink: &mut dyn FnMut(&ChatEvent),
    ) -> Result<Vec<Directive>, DriverError> {
        let turn_index = live.state.turns.len().checked_sub(1);
        let (next, directives) = live.state.apply_event(event)?;
        let role = match event {
            EngineEvent::CharacterReplied { .. } => turn_index
                .and_then(|i| next.turns.get(i))
                .and_then(|t| t.character_messages.last())
                .map(|m| m.role),
            _ => None,
        };
        self.emit(live, ChatPayload::from_engine(event, role), Some(next), sink)?;
        Ok(directives)
    }

    fn notice(
        &self,
        live: &mut LiveSession,
        code: &str,
        message: &str,
        sink: &mut dyn FnMut(&ChatEvent),
    ) -> Result<(), DriverError> {
        let payload = ChatPayload::ErrorNotice {
            code: code.to_string(),
            message: message.to_string(),
        };
        self.emit(live, payload, None, sink)
    }

    fn emit(
        &self,
        live: &mut LiveSession,
        payload: ChatPayload,
        next: Option<SessionState>,
        sink: &mut dyn FnMut(&ChatEvent),
    ) -> Result<(), DriverError> {
        let event = ChatEvent {
            event_id: live.last_event_id + 1,
            session_id: live.id().clone(),
            timestamp: self.clock.now(),
            payload,
        };
        self.store.append(&event)?;
        live.last_event_id = event.event_id;
        if let Some(state) = next {
            live.state = state;
        }
        self.store.save_snapshot(
            live.id(),
            &Snapshot {
                through_event_id: live.last_event_id,
                state: live.state.clone(),
            },
        )?;
        sink(&event);
        Ok(())
    }
}
