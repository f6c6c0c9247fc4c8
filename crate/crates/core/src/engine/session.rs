use std::fmt;

use serde::{Deserialize, Serialize};

use super::schedule::{ScheduleConfig, ScheduleState};
use super::{Assignment, EngineError, ScenarioKind, SessionId, UserProfile};
use crate::content::ScenarioBrief;
use crate::orchestrator::{
    validate_option_set, CharacterMessage, Feedback, FeedbackKind, MessageOptionSet, MessageRole,
    OPTION_COUNT,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum SessionPhase {
    Registering,
    Briefed,
    /// The user owes a draft. In blunt turns the character's trigger
    /// message must land first.
    AwaitingDraft { assignment: Assignment },
    AwaitingOptions,
    AwaitingSelection,
    /// An option was sent; the character's response and the feedback panel
    /// are pending, in that order.
    AwaitingResponse,
    AwaitingContinue,
    /// A free-turn draft or a continue message was sent; the character's
    /// reply is pending.
    AwaitingReply,
    Completed,
}

impl fmt::Display for SessionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionPhase::Registering => f.write_str("registering"),
            SessionPhase::Briefed => f.write_str("briefed"),
            SessionPhase::AwaitingDraft { assignment } => {
                write!(f, "awaiting_draft({assignment})")
            }
            SessionPhase::AwaitingOptions => f.write_str("awaiting_options"),
            SessionPhase::AwaitingSelection => f.write_str("awaiting_selection"),
            SessionPhase::AwaitingResponse => f.write_str("awaiting_response"),
            SessionPhase::AwaitingContinue => f.write_str("awaiting_continue"),
            SessionPhase::AwaitingReply => f.write_str("awaiting_reply"),
            SessionPhase::Completed => f.write_str("completed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineEvent {
    StartChat,
    SubmitDraft { text: String },
    PresentOptions { option_set: MessageOptionSet },
    SelectOption { index: usize },
    CharacterReplied { text: String },
    FeedbackIssued { feedback: Feedback },
    SubmitContinue { text: String },
    BluntTriggerIssued { text: String },
}

impl EngineEvent {
    pub fn name(&self) -> &'static str {
        match self {
            EngineEvent::StartChat => "start_chat",
            EngineEvent::SubmitDraft { .. } => "submit_draft",
            EngineEvent::PresentOptions { .. } => "present_options",
            EngineEvent::SelectOption { .. } => "select_option",
            EngineEvent::CharacterReplied { .. } => "character_replied",
            EngineEvent::FeedbackIssued { .. } => "feedback_issued",
            EngineEvent::SubmitContinue { .. } => "submit_continue",
            EngineEvent::BluntTriggerIssued { .. } => "blunt_trigger_issued",
        }
    }
}

/// Side effects the engine asks its owner to carry out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Directive {
    NeedBluntTrigger { turn: u32 },
    NeedOptions { turn: u32, kind: ScenarioKind },
    NeedResponseAndFeedback { turn: u32, kind: ScenarioKind, selected: usize },
    NeedReply { turn: u32 },
    NeedContinueReply { turn: u32 },
    PromptContinue { turn: u32, prefilled: String },
    SessionCompleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based turn ordinal.
    pub turn: u32,
    pub assignment: Assignment,
    pub draft: Option<String>,
    pub option_set: Option<MessageOptionSet>,
    pub selected: Option<usize>,
    pub character_messages: Vec<CharacterMessage>,
    pub feedback: Option<Feedback>,
    pub continue_message: Option<String>,
    pub continue_message_sent: bool,
}

impl TurnRecord {
    fn open(turn: u32, assignment: Assignment) -> Self {
        Self {
            turn,
            assignment,
            draft: None,
            option_set: None,
            selected: None,
            character_messages: Vec::new(),
            feedback: None,
            continue_message: None,
            continue_message_sent: false,
        }
    }

    pub fn kind(&self) -> Option<ScenarioKind> {
        self.assignment.kind()
    }

    pub fn message(&self, role: MessageRole) -> Option<&CharacterMessage> {
        self.character_messages.iter().find(|m| m.role == role)
    }

    pub fn blunt_trigger(&self) -> Option<&CharacterMessage> {
        self.message(MessageRole::BluntTrigger)
    }

    /// The text the user actually sent for this turn (draft in free turns,
    /// the chosen option otherwise).
    pub fn sent_text(&self) -> Option<&str> {
        match self.assignment {
            Assignment::Free => self.draft.as_deref(),
            Assignment::Scenario(_) => {
                let set = self.option_set.as_ref()?;
                set.options.get(self.selected?).map(|o| o.text.as_str())
            }
        }
    }

    pub fn picked_appropriate(&self) -> Option<bool> {
        let set = self.option_set.as_ref()?;
        Some(self.selected? == set.appropriate_index)
    }

    /// The character's answer to the sent message (not the trigger and not
    /// the reply to a continue message).
    pub fn response(&self) -> Option<&CharacterMessage> {
        self.character_messages.iter().find(|m| {
            matches!(
                m.role,
                MessageRole::NormalReply | MessageRole::Clarification | MessageRole::BluntFollowUp
            )
        })
    }

    pub fn is_resolved(&self) -> bool {
        match self.assignment {
            Assignment::Free => self.draft.is_some() && self.response().is_some(),
            Assignment::Scenario(_) => match &self.feedback {
                None => false,
                Some(f) if f.kind == FeedbackKind::Positive => true,
                Some(_) => {
                    self.continue_message_sent && self.message(MessageRole::ContinueReply).is_some()
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Character,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub speaker: Speaker,
    pub text: String,
}

/// One user's full simulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub profile: UserProfile,
    pub brief: ScenarioBrief,
    pub character_name: String,
    pub schedule: ScheduleState,
    pub phase: SessionPhase,
    pub turns: Vec<TurnRecord>,
}

impl SessionState {
    pub fn new(
        session_id: SessionId,
        profile: UserProfile,
        brief: ScenarioBrief,
        character_name: impl Into<String>,
        order_seed: u64,
    ) -> Result<Self, EngineError> {
        Self::with_config(
            session_id,
            profile,
            brief,
            character_name,
            order_seed,
            ScheduleConfig::default(),
        )
    }

    pub fn with_config(
        session_id: SessionId,
        profile: UserProfile,
        brief: ScenarioBrief,
        character_name: impl Into<String>,
        order_seed: u64,
        config: ScheduleConfig,
    ) -> Result<Self, EngineError> {
        profile.validate()?;
        let character_name = character_name.into();
        if character_name.trim().is_empty() {
            return Err(EngineError::InvalidProfile {
                field: "character_name",
            });
        }
        Ok(Self {
            session_id,
            profile,
            brief,
            character_name,
            schedule: ScheduleState::with_config(order_seed, config),
            phase: SessionPhase::Briefed,
            turns: Vec::new(),
        })
    }

    pub fn current_turn(&self) -> Option<&TurnRecord> {
        self.turns.last()
    }

    pub fn is_complete(&self) -> bool {
        self.schedule.is_exhausted() && self.turns.last().is_some_and(TurnRecord::is_resolved)
    }

    /// Pure transition. On error the caller's state is untouched by
    /// construction.
    pub fn apply_event(
        &self,
        event: &EngineEvent,
    ) -> Result<(SessionState, Vec<Directive>), EngineError> {
        let mut next = self.clone();
        let directives = next.transition(event)?;
        Ok((next, directives))
    }

    /// In-place variant of [`apply_event`](Self::apply_event); leaves `self`
    /// unchanged on error.
    pub fn apply(&mut self, event: &EngineEvent) -> Result<Vec<Directive>, EngineError> {
        let (next, directives) = self.apply_event(event)?;
        *self = next;
        Ok(directives)
    }

    /// Directives still outstanding for the current phase. Used to resume
    /// after a failed generation or a restart.
    pub fn pending_directives(&self) -> Vec<Directive> {
        let Some(turn) = self.turns.last() else {
            return Vec::new();
        };
        let n = turn.turn;
        match &self.phase {
            SessionPhase::AwaitingDraft {
                assignment: Assignment::Scenario(ScenarioKind::MisperceivedBlunt),
            } if turn.blunt_trigger().is_none() => vec![Directive::NeedBluntTrigger { turn: n }],
            SessionPhase::AwaitingOptions => match turn.kind() {
                Some(kind) => vec![Directive::NeedOptions { turn: n, kind }],
                None => Vec::new(),
            },
            SessionPhase::AwaitingResponse => match (turn.kind(), turn.selected) {
                (Some(kind), Some(selected)) => vec![Directive::NeedResponseAndFeedback {
                    turn: n,
                    kind,
                    selected,
                }],
                _ => Vec::new(),
            },
            SessionPhase::AwaitingContinue => turn
                .feedback
                .as_ref()
                .and_then(|f| f.continue_message.clone())
                .map(|prefilled| vec![Directive::PromptContinue { turn: n, prefilled }])
                .unwrap_or_default(),
            SessionPhase::AwaitingReply if turn.continue_message_sent => {
                vec![Directive::NeedContinueReply { turn: n }]
            }
            SessionPhase::AwaitingReply => vec![Directive::NeedReply { turn: n }],
            _ => Vec::new(),
        }
    }

    /// Conversation so far as the two participants saw it.
    pub fn history(&self) -> Vec<HistoryEntry> {
        let mut out = Vec::new();
        let character = |out: &mut Vec<HistoryEntry>, m: Option<&CharacterMessage>| {
            if let Some(m) = m {
                out.push(HistoryEntry {
                    speaker: Speaker::Character,
                    text: m.text.clone(),
                });
            }
        };
        for turn in &self.turns {
            character(&mut out, turn.blunt_trigger());
            if let Some(sent) = turn.sent_text() {
                out.push(HistoryEntry {
                    speaker: Speaker::User,
                    text: sent.to_string(),
                });
            }
            character(&mut out, turn.response());
            if let (true, Some(text)) = (turn.continue_message_sent, &turn.continue_message) {
                out.push(HistoryEntry {
                    speaker: Speaker::User,
                    text: text.clone(),
                });
            }
            character(&mut out, turn.message(MessageRole::ContinueReply));
        }
        out
    }

    fn illegal(&self, event: &EngineEvent) -> EngineError {
        EngineError::IllegalEvent {
            phase: self.phase.to_string(),
            event: event.name().to_string(),
        }
    }

    fn turn_mut(&mut self) -> &mut TurnRecord {
        self.turns
            .last_mut()
            .expect("phase past Briefed always has an open turn")
    }

    fn transition(&mut self, event: &EngineEvent) -> Result<Vec<Directive>, EngineError> {
        let phase = self.phase.clone();
        match (phase, event) {
            (SessionPhase::Briefed, EngineEvent::StartChat) => self.open_next_turn(),

            (SessionPhase::AwaitingDraft { assignment }, EngineEvent::BluntTriggerIssued { text }) => {
                if assignment != Assignment::Scenario(ScenarioKind::MisperceivedBlunt)
                    || self.turn_mut().blunt_trigger().is_some()
                {
                    return Err(self.illegal(event));
                }
                require_text(text, event)?;
                self.turn_mut().character_messages.push(CharacterMessage {
                    text: text.clone(),
                    role: MessageRole::BluntTrigger,
                });
                Ok(Vec::new())
            }

            (SessionPhase::AwaitingDraft { assignment }, EngineEvent::SubmitDraft { text }) => {
                if assignment == Assignment::Scenario(ScenarioKind::MisperceivedBlunt)
                    && self.turn_mut().blunt_trigger().is_none()
                {
                    return Err(self.illegal(event));
                }
                require_text(text, event)?;
                let turn = self.turn_mut();
                turn.draft = Some(text.clone());
                let n = turn.turn;
                match assignment {
                    Assignment::Free => {
                        self.phase = SessionPhase::AwaitingReply;
                        Ok(vec![Directive::NeedReply { turn: n }])
                    }
                    Assignment::Scenario(kind) => {
                        self.phase = SessionPhase::AwaitingOptions;
                        Ok(vec![Directive::NeedOptions { turn: n, kind }])
                    }
                }
            }

            (SessionPhase::AwaitingOptions, EngineEvent::PresentOptions { option_set }) => {
                let kind = self
                    .turn_mut()
                    .kind()
                    .expect("options are only requested in scenario turns");
                validate_option_set(option_set, kind).map_err(|v| EngineError::InvalidOptionSet {
                    violations: v.iter().map(ToString::to_string).collect(),
                })?;
                self.turn_mut().option_set = Some(option_set.clone());
                self.phase = SessionPhase::AwaitingSelection;
                Ok(Vec::new())
            }

            (SessionPhase::AwaitingSelection, EngineEvent::SelectOption { index }) => {
                if *index >= OPTION_COUNT {
                    return Err(EngineError::UnknownOptionIndex { index: *index });
                }
                let turn = self.turn_mut();
                turn.selected = Some(*index);
                let (n, kind) = (turn.turn, turn.kind().expect("scenario turn"));
                self.phase = SessionPhase::AwaitingResponse;
                Ok(vec![Directive::NeedResponseAndFeedback {
                    turn: n,
                    kind,
                    selected: *index,
                }])
            }

            (SessionPhase::AwaitingResponse, EngineEvent::CharacterReplied { text }) => {
                if self.turn_mut().response().is_some() {
                    return Err(self.illegal(event));
                }
                require_text(text, event)?;
                let turn = self.turn_mut();
                let appropriate = turn.picked_appropriate().unwrap_or(false);
                let kind = turn.kind().expect("scenario turn");
                let role = if appropriate {
                    MessageRole::NormalReply
                } else if kind.clarifies_on_misread() {
                    MessageRole::Clarification
                } else {
                    MessageRole::BluntFollowUp
                };
                turn.character_messages.push(CharacterMessage {
                    text: text.clone(),
                    role,
                });
                Ok(Vec::new())
            }

            (SessionPhase::AwaitingResponse, EngineEvent::FeedbackIssued { feedback }) => {
                if self.turn_mut().response().is_none() {
                    return Err(self.illegal(event));
                }
                let violations = feedback.violations();
                if !violations.is_empty() {
                    return Err(EngineError::InvalidFeedback { violations });
                }
                let turn = self.turn_mut();
                let expected = if turn.picked_appropriate().unwrap_or(false) {
                    FeedbackKind::Positive
                } else {
                    FeedbackKind::Constructive
                };
                if feedback.kind != expected {
                    return Err(EngineError::FeedbackBranchMismatch { expected });
                }
                turn.feedback = Some(feedback.clone());
                let n = turn.turn;
                match (expected, &feedback.continue_message) {
                    (FeedbackKind::Constructive, Some(prefilled)) => {
                        self.phase = SessionPhase::AwaitingContinue;
                        Ok(vec![Directive::PromptContinue {
                            turn: n,
                            prefilled: prefilled.clone(),
                        }])
                    }
                    _ => self.advance(),
                }
            }

            (SessionPhase::AwaitingContinue, EngineEvent::SubmitContinue { text }) => {
                require_text(text, event)?;
                let turn = self.turn_mut();
                turn.continue_message = Some(text.clone());
                turn.continue_message_sent = true;
                let n = turn.turn;
                self.phase = SessionPhase::AwaitingReply;
                Ok(vec![Directive::NeedContinueReply { turn: n }])
            }

            (SessionPhase::AwaitingReply, EngineEvent::CharacterReplied { text }) => {
                require_text(text, event)?;
                let turn = self.turn_mut();
                let role = if turn.continue_message_sent {
                    MessageRole::ContinueReply
                } else {
                    MessageRole::NormalReply
                };
                turn.character_messages.push(CharacterMessage {
                    text: text.clone(),
                    role,
                });
                self.advance()
            }

            _ => Err(self.illegal(event)),
        }
    }

    fn advance(&mut self) -> Result<Vec<Directive>, EngineError> {
        if self.schedule.is_exhausted() {
            self.phase = SessionPhase::Completed;
            return Ok(vec![Directive::SessionCompleted]);
        }
        self.open_next_turn()
    }

    fn open_next_turn(&mut self) -> Result<Vec<Directive>, EngineError> {
        let (assignment, schedule) = self.schedule.next_assignment()?;
        self.schedule = schedule;
        let n = self.turns.len() as u32 + 1;
        self.turns.push(TurnRecord::open(n, assignment));
        self.phase = SessionPhase::AwaitingDraft { assignment };
        Ok(match assignment {
            Assignment::Scenario(ScenarioKind::MisperceivedBlunt) => {
                vec![Directive::NeedBluntTrigger { turn: n }]
            }
            _ => Vec::new(),
        })
    }

    /// Every violated state invariant, described. Empty means consistent.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.schedule.violations();

        for (i, turn) in self.turns.iter().enumerate() {
            if turn.turn as usize != i + 1 {
                out.push(format!("turn at position {i} is numbered {}", turn.turn));
            }
            let is_last = i + 1 == self.turns.len();
            if !is_last && !turn.is_resolved() {
                out.push(format!("turn {} left unresolved", turn.turn));
            }
            if let Some(f) = &turn.feedback {
                if f.is_constructive() && !is_last && !turn.continue_message_sent {
                    out.push(format!("turn {} moved on without a continue message", turn.turn));
                }
                if Some(f.kind == FeedbackKind::Positive) != turn.picked_appropriate() {
                    out.push(format!("turn {} feedback branch disagrees with selection", turn.turn));
                }
            }
            if let Some(selected) = turn.selected {
                if selected >= OPTION_COUNT {
                    out.push(format!("turn {} selected {selected}", turn.turn));
                }
            }
            match (turn.kind(), &turn.option_set) {
                (Some(kind), Some(set)) => {
                    if let Err(v) = validate_option_set(set, kind) {
                        out.push(format!("turn {} option set invalid: {v:?}", turn.turn));
                    }
                }
                (None, Some(_)) => out.push(format!("free turn {} has options", turn.turn)),
                _ => {}
            }
            if turn.kind() == Some(ScenarioKind::MisperceivedBlunt) && turn.draft.is_some() {
                match turn.character_messages.first() {
                    Some(m) if m.role == MessageRole::BluntTrigger => {}
                    _ => out.push(format!("blunt turn {} drafted before trigger", turn.turn)),
                }
            }
            if turn.kind() != Some(ScenarioKind::MisperceivedBlunt) && turn.blunt_trigger().is_some()
            {
                out.push(format!("turn {} has a trigger outside a blunt turn", turn.turn));
            }
        }

        let scheduled: Vec<ScenarioKind> = self.turns.iter().filter_map(|t| t.kind()).collect();
        if scheduled != self.schedule.emitted {
            out.push("scenario turns disagree with the schedule".to_string());
        }

        let last = self.turns.last();
        let consistent = match &self.phase {
            SessionPhase::Registering | SessionPhase::Briefed => self.turns.is_empty(),
            SessionPhase::AwaitingDraft { assignment } => last.is_some_and(|t| {
                t.assignment == *assignment && t.draft.is_none() && t.option_set.is_none()
            }),
            SessionPhase::AwaitingOptions => {
                last.is_some_and(|t| t.kind().is_some() && t.draft.is_some() && t.option_set.is_none())
            }
            SessionPhase::AwaitingSelection => {
                last.is_some_and(|t| t.option_set.is_some() && t.selected.is_none())
            }
            SessionPhase::AwaitingResponse => {
                last.is_some_and(|t| t.selected.is_some() && t.feedback.is_none())
            }
            SessionPhase::AwaitingContinue => last.is_some_and(|t| {
                t.feedback.as_ref().is_some_and(Feedback::is_constructive) && !t.continue_message_sent
            }),
            SessionPhase::AwaitingReply => last.is_some_and(|t| !t.is_resolved()),
            SessionPhase::Completed => self.is_complete(),
        };
        if !consistent {
            out.push(format!("phase {} inconsistent with the last turn", self.phase));
        }
        out
    }
}

fn require_text(text: &str, event: &EngineEvent) -> Result<(), EngineError> {
    if text.trim().is_empty() {
        Err(EngineError::EmptyText {
            event: event.name().to_string(),
        })
    } else {
        Ok(())
    }
}
