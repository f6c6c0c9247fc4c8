//! Structured export of a session for later analysis.
//!
//! The document is built by replaying the event log, so each message keeps
//! the timestamp of the event that produced it.

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::content::ScenarioBrief;
use crate::engine::{Assignment, EngineError, ScenarioKind, SessionState, Speaker, UserProfile};
use crate::orchestrator::{Feedback, MessageOptionSet, MessageRole};
use crate::store::{ChatPayload, SessionRecord};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

pub const REDACTED: &str = "[redacted]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub profile: UserProfile,
    pub character_name: String,
    pub brief: ScenarioBrief,
    pub order_seed: u64,
    pub completed: bool,
    pub turns: Vec<TranscriptTurn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<Notice>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub turn: u32,
    /// `free` or a scenario kind tag.
    pub assignment: String,
    pub draft: Option<String>,
    pub options: Option<MessageOptionSet>,
    pub selected: Option<usize>,
    pub picked_appropriate: Option<bool>,
    pub messages: Vec<TranscriptMessage>,
    pub feedback: Option<Feedback>,
    pub continue_message: Option<String>,
    pub timing: TurnTiming,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMessage {
    pub speaker: Speaker,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<MessageRole>,
    pub text: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTiming {
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    /// From the moment options were shown to the pick.
    pub selection_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice {
    pub event_id: u64,
    pub at: DateTime<Utc>,
    pub code: String,
    pub message: String,
}

impl TranscriptTurn {
    pub fn kind(&self) -> Option<ScenarioKind> {
        ScenarioKind::ALL.into_iter().find(|k| k.tag() == self.assignment)
    }

    pub fn roles(&self) -> Vec<(Speaker, Option<MessageRole>)> {
        self.messages.iter().map(|m| (m.speaker, m.role)).collect()
    }
}

fn assignment_tag(a: Assignment) -> String {
    match a {
        Assignment::Free => "free".to_string(),
        Assignment::Scenario(kind) => kind.tag().to_string(),
    }
}

impl Transcript {
    pub fn from_record(record: &SessionRecord) -> Result<Self, EngineError> {
        let mut state: SessionState = record.meta.initial.clone();
        let mut turns: Vec<TranscriptTurn> = Vec::new();
        let mut notices = Vec::new();
        let mut shown_at: Option<DateTime<Utc>> = None;

        for event in &record.events {
            let at = event.timestamp;
            let Some(engine_event) = event.payload.engine_event() else {
                if let ChatPayload::ErrorNotice { code, message } = &event.payload {
                    notices.push(Notice {
                        event_id: event.event_id,
                        at,
                        code: code.clone(),
                        message: message.clone(),
                    });
                }
                continue;
            };
            let owner = state.turns.len().checked_sub(1);
            state.apply(&engine_event)?;

            // A turn is listed once the event that opened it has been seen.
            while turns.len() < state.turns.len() {
                let record = &state.turns[turns.len()];
                turns.push(TranscriptTurn {
                    turn: record.turn,
                    assignment: assignment_tag(record.assignment),
                    draft: None,
                    options: None,
                    selected: None,
                    picked_appropriate: None,
                    messages: Vec::new(),
                    feedback: None,
                    continue_message: None,
                    timing: TurnTiming {
                        started_at: at,
                        ended_at: at,
                        selection_ms: None,
                    },
                });
            }
            let Some(i) = owner else { continue };
            let settled = &state.turns[i];
            let turn = &mut turns[i];
            turn.timing.ended_at = at;
            let free = settled.assignment == Assignment::Free;
            match &event.payload {
                ChatPayload::SubmitDraft { text } => {
                    turn.draft = Some(text.clone());
                    if free {
                        turn.messages.push(user(text, at));
                    }
                }
                ChatPayload::OptionsPresented { option_set } => {
                    turn.options = Some(option_set.clone());
                    shown_at = Some(at);
                }
                ChatPayload::SelectOption { index } => {
                    turn.selected = Some(*index);
                    turn.picked_appropriate = settled.picked_appropriate();
                    turn.timing.selection_ms = shown_at.take().map(|s| (at - s).num_milliseconds());
                    if let Some(text) = settled.sent_text() {
                        turn.messages.push(user(text, at));
                    }
                }
                ChatPayload::BluntTriggerIssued { text } => {
                    turn.messages.push(character(text, MessageRole::BluntTrigger, at));
                }
                ChatPayload::CharacterReplied { text, role } => {
                    turn.messages.push(character(text, *role, at));
                }
                ChatPayload::FeedbackPresented { feedback } => {
                    turn.feedback = Some(feedback.clone());
                }
                ChatPayload::SubmitContinue { text } => {
                    turn.continue_message = Some(text.clone());
                    turn.messages.push(user(text, at));
                }
                _ => {}
            }
        }

        Ok(Transcript {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            session_id: record.meta.session_id.as_str().to_string(),
            created_at: record.meta.created_at,
            profile: state.profile.clone(),
            character_name: state.character_name.clone(),
            brief: state.brief.clone(),
            order_seed: record.meta.fingerprint.seed,
            completed: state.is_complete(),
            turns,
            notices,
        })
    }

    /// Replaces the user's first name everywhere it appears as a word.
    pub fn redacted(&self) -> Transcript {
        let name = self.profile.first_name.trim();
        if name.is_empty() {
            return self.clone();
        }
        let pattern = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(name)))
            .expect("escaped name is a valid pattern");
        let mut value = serde_json::to_value(self).expect("transcript serializes");
        scrub(&mut value, &pattern);
        serde_json::from_value(value).expect("scrubbed transcript keeps its shape")
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("transcript serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn scenario_turns(&self) -> impl Iterator<Item = &TranscriptTurn> {
        self.turns.iter().filter(|t| t.assignment != "free")
    }
}

const TIMESTAMP_KEYS: [&str; 4] = ["at", "started_at", "ended_at", "created_at"];

fn scrub(value: &mut Value, pattern: &Regex) {
    match value {
        Value::String(s) => {
            if pattern.is_match(s) {
                *s = pattern.replace_all(s, REDACTED).into_owned();
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| scrub(v, pattern)),
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if !TIMESTAMP_KEYS.contains(&key.as_str()) {
                    scrub(v, pattern);
                }
            }
        }
        _ => {}
    }
}

fn user(text: &str, at: DateTime<Utc>) -> TranscriptMessage {
    TranscriptMessage {
        speaker: Speaker::User,
        role: None,
        text: text.to_string(),
        at,
    }
}

fn character(text: &str, role: MessageRole, at: DateTime<Utc>) -> TranscriptMessage {
    TranscriptMessage {
        speaker: Speaker::Character,
        role: Some(role),
        text: text.to_string(),
        at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::ContentBundle;
    use crate::driver::{ClientCommand, SessionDriver, SteppingClock};
    use crate::engine::{SessionId, SessionPhase};
    use crate::gateway::{Gateway, StubScript};
    use crate::orchestrator::{FeedbackKind, Orchestrator};
    use crate::store::{MemoryStore, SessionStore};
    use chrono::{TimeDelta, TimeZone};
    use std::sync::Arc;

    fn completed(wrong: bool, seed: u64) -> SessionRecord {
        let store = Arc::new(MemoryStore::new());
        let orch = Orchestrator::new(
            Arc::new(ContentBundle::builtin()),
            Arc::new(Gateway::stubbed(StubScript::builtin())),
        );
        let clock = SteppingClock::new(
            Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap(),
            TimeDelta::milliseconds(1500),
        );
        let d = SessionDriver::new(Arc::new(orch), store.clone(), Arc::new(clock));
        let profile = UserProfile::new("Mark", "he/him", "machine learning");
        let mut live = d.create_session(SessionId::new("t1"), profile, seed).unwrap();
        d.handle_collect(&mut live, &ClientCommand::StartChat).unwrap();
        while live.state.phase != SessionPhase::Completed {
            let cmd = match &live.state.phase {
                SessionPhase::AwaitingDraft { .. } => ClientCommand::SubmitDraft {
                    text: "mark here, what do you think?".into(),
                },
                SessionPhase::AwaitingSelection => {
                    let set = live.state.current_turn().unwrap().option_set.as_ref().unwrap();
                    let pick = if wrong {
                        (set.appropriate_index + 1) % 3
                    } else {
                        set.appropriate_index
                    };
                    ClientCommand::SelectOption { index: pick }
                }
                SessionPhase::AwaitingContinue => ClientCommand::SubmitContinue {
                    text: live.state.current_turn().unwrap().feedback.as_ref().unwrap()
                        .continue_message.clone().unwrap(),
                },
                other => panic!("stalled in {other}"),
            };
            d.handle_collect(&mut live, &cmd).unwrap();
        }
        store.load(&SessionId::new("t1")).unwrap()
    }

    #[test]
    fn ten_turns_two_free_then_each_kind_twice() {
        let t = Transcript::from_record(&completed(false, 3)).unwrap();
        assert!(t.completed);
        assert_eq!(t.turns.len(), 10);
        assert!(t.turns[..2].iter().all(|t| t.assignment == "free"));
        for kind in ScenarioKind::ALL {
            let n = t.scenario_turns().filter(|t| t.kind() == Some(kind)).count();
            assert_eq!(n, 2, "{kind:?}");
        }
        assert!(t.notices.is_empty());
    }

    #[test]
    fn wrong_picks_show_clarify_feedback_continue_order() {
        let t = Transcript::from_record(&completed(true, 3)).unwrap();
        for turn in t.scenario_turns() {
            let fb = turn.feedback.as_ref().unwrap();
            assert_eq!(fb.kind, FeedbackKind::Constructive);
            assert_eq!(turn.picked_appropriate, Some(false));
            let expected_reply = if turn.kind() == Some(ScenarioKind::MisperceivedBlunt) {
                MessageRole::BluntFollowUp
            } else {
                MessageRole::Clarification
            };
            let mut roles = turn.roles();
            if turn.kind() == Some(ScenarioKind::MisperceivedBlunt) {
                assert_eq!(roles.remove(0), (Speaker::Character, Some(MessageRole::BluntTrigger)));
            }
            assert_eq!(
                roles,
                vec![
                    (Speaker::User, None),
                    (Speaker::Character, Some(expected_reply)),
                    (Speaker::User, None),
                    (Speaker::Character, Some(MessageRole::ContinueReply)),
                ]
            );
            assert_eq!(turn.continue_message, fb.continue_message);
            assert!(turn.timing.selection_ms.unwrap() > 0);
        }
    }

    #[test]
    fn free_turn_draft_is_the_sent_message() {
        let t = Transcript::from_record(&completed(false, 1)).unwrap();
        let free = &t.turns[0];
        assert_eq!(free.messages[0].text, "mark here, what do you think?");
        assert_eq!(free.messages[1].role, Some(MessageRole::NormalReply));
        let scenario = t.scenario_turns().next().unwrap();
        let sent = scenario.messages.iter().find(|m| m.speaker == Speaker::User).unwrap();
        let set = scenario.options.as_ref().unwrap();
        assert_eq!(sent.text, set.options[scenario.selected.unwrap()].text);
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let t = Transcript::from_record(&completed(true, 8)).unwrap();
        let first = t.to_json();
        let back = Transcript::from_json(&first).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json(), first);
    }

    #[test]
    fn redaction_hides_the_first_name_as_a_word() {
        let t = Transcript::from_record(&completed(false, 2)).unwrap().redacted();
        let json = t.to_json();
        assert!(!json.to_lowercase().contains("\"mark\""));
        assert!(!Regex::new(r"(?i)\bmark\b").unwrap().is_match(&json));
        assert_eq!(t.profile.first_name, REDACTED);
        assert!(json.contains("[redacted] here, what do you think?"));
        // timestamps and other fields survive
        assert_eq!(t.turns.len(), 10);
        assert_eq!(t.profile.topic, "machine learning");
    }

    #[test]
    fn redaction_leaves_longer_words_alone() {
        let mut t = Transcript::from_record(&completed(false, 2)).unwrap();
        t.brief.background = "Mark marked the market.".into();
        assert_eq!(t.redacted().brief.background, "[redacted] marked the market.");
    }
}
