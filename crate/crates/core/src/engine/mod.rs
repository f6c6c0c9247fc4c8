//! Pure session state machine and scenario scheduler.
//!
//! Nothing in here performs I/O. Every side effect the conversation loop
//! needs (generating options, character replies, feedback) is requested
//! through a [`Directive`] and fed back in as an [`EngineEvent`].

mod schedule;
mod session;
mod types;

pub use schedule::{
    pass_order, ScheduleConfig, ScheduleState, DEFAULT_FREE_TURNS, ROUNDS_PER_KIND,
    SCENARIO_TURNS,
};
pub use session::{
    Directive, EngineEvent, HistoryEntry, SessionPhase, SessionState, Speaker, TurnRecord,
};
pub use types::{Assignment, ScenarioKind, SessionId, UserProfile};

use thiserror::Error;

use crate::orchestrator::FeedbackKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("invalid profile: `{field}` must not be empty")]
    InvalidProfile { field: &'static str },
    #[error("schedule exhausted")]
    ScheduleExhausted,
    #[error("event `{event}` is not allowed while {phase}")]
    IllegalEvent { phase: String, event: String },
    #[error("unknown option index {index}")]
    UnknownOptionIndex { index: usize },
    #[error("`{event}` carries empty text")]
    EmptyText { event: String },
    #[error("option set rejected: {}", violations.join("; "))]
    InvalidOptionSet { violations: Vec<String> },
    #[error("feedback rejected: {}", violations.join("; "))]
    InvalidFeedback { violations: Vec<String> },
    #[error("feedback must be {expected:?} for this selection")]
    FeedbackBranchMismatch { expected: FeedbackKind },
}
