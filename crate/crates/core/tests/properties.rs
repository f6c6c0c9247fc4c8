use std::sync::Arc;

use candor_core::content::{ContentBundle, ScenarioBrief};
use candor_core::driver::{ClientCommand, SessionDriver, SteppingClock};
use candor_core::engine::{EngineEvent, ScenarioKind, SessionId, SessionPhase, SessionState, UserProfile};
use candor_core::gateway::Gateway;
use candor_core::orchestrator::{
    display_order, validate_option_set, BestAlternative, Feedback, FeedbackKind, MessageOption,
    MessageOptionSet, OptionStyle, Orchestrator,
};
use candor_core::store::{canonical_bytes, fold, ChatPayload, MemoryStore, SessionStore};
use candor_core::transcript::Transcript;
use chrono::{TimeDelta, TimeZone, Utc};
use proptest::prelude::*;

fn state(seed: u64) -> SessionState {
    SessionState::new(
        SessionId::new("prop"),
        UserProfile::new("Mark", "he/him", "machine learning"),
        ScenarioBrief {
            background: "A chat.".into(),
            instruction: "Say hello.".into(),
        },
        "Julia",
        seed,
    )
    .unwrap()
}

fn option_set(kind: ScenarioKind, appropriate: usize, order: [u8; 3]) -> MessageOptionSet {
    let (good, bad) = OptionStyle::pair_for(kind);
    MessageOptionSet {
        kind,
        options: (0..3)
            .map(|i| MessageOption {
                text: format!("option {i} 🙂"),
                display_position: order[i],
                style: if i == appropriate { good } else { bad },
            })
            .collect(),
        appropriate_index: appropriate,
        hidden_rationales: vec!["a".into(), "b".into(), "c".into()],
    }
}

fn feedback(kind: FeedbackKind) -> Feedback {
    let constructive = kind == FeedbackKind::Constructive;
    Feedback {
        kind,
        heading: "heading".into(),
        body: "body".into(),
        best_alternative: constructive.then(|| BestAlternative {
            text: "better".into(),
            rationale: "why".into(),
        }),
        continue_message: constructive.then(|| "let me rephrase".into()),
    }
}

/// Maps a drawn (selector, parameter, text) triple onto an engine event,
/// using the current turn so that many draws are legal.
fn event(state: &SessionState, (sel, param, text): &(u8, u8, String)) -> EngineEvent {
    let kind = state
        .current_turn()
        .and_then(|t| t.kind())
        .unwrap_or(ScenarioKind::ALL[*param as usize % 4]);
    let orders = [[0, 1, 2], [2, 0, 1], [1, 2, 0], [0, 0, 1]];
    match sel % 8 {
        0 => EngineEvent::StartChat,
        1 => EngineEvent::SubmitDraft { text: text.clone() },
        2 => EngineEvent::BluntTriggerIssued { text: text.clone() },
        3 => EngineEvent::SelectOption {
            index: *param as usize % 4,
        },
        4 => EngineEvent::CharacterReplied { text: text.clone() },
        5 => EngineEvent::SubmitContinue { text: text.clone() },
        6 => EngineEvent::PresentOptions {
            option_set: option_set(kind, *param as usize % 3, orders[*param as usize % 4]),
        },
        _ => EngineEvent::FeedbackIssued {
            feedback: feedback(if param % 2 == 0 {
                FeedbackKind::Positive
            } else {
                FeedbackKind::Constructive
            }),
        },
    }
}

fn driver() -> (SessionDriver, Arc<MemoryStore>) {
    let store = Arc::new(MemoryStore::new());
    let orch = Orchestrator::new(
        Arc::new(ContentBundle::builtin()),
        Arc::new(Gateway::stubbed(candor_core::gateway::StubScript::builtin())),
    );
    let clock = SteppingClock::new(Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap(), TimeDelta::seconds(1));
    (SessionDriver::new(Arc::new(orch), store.clone(), Arc::new(clock)), store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_stays_consistent_under_arbitrary_events(
        seed in any::<u64>(),
        draws in prop::collection::vec((any::<u8>(), any::<u8>(), "[a-z ]{0,12}"), 1..120),
    ) {
        let mut s = state(seed);
        for draw in &draws {
            let e = event(&s, draw);
            let before = s.clone();
            match s.apply(&e) {
                Ok(_) => prop_assert!(s.violations().is_empty(), "{:?}", s.violations()),
                Err(_) => prop_assert_eq!(&s, &before),
            }
            prop_assert!(s.turns.len() <= 10);
        }
    }

    #[test]
    fn display_order_is_a_permutation(seed in any::<u64>(), turn in any::<u32>()) {
        let mut order = display_order(seed, turn);
        order.sort_unstable();
        prop_assert_eq!(order, [0, 1, 2]);
    }

    #[test]
    fn well_formed_sets_validate_for_any_layout(
        k in 0usize..4,
        appropriate in 0usize..3,
        perm in Just([0u8, 1, 2]).prop_shuffle(),
    ) {
        let kind = ScenarioKind::ALL[k];
        let set = option_set(kind, appropriate, perm);
        prop_assert_eq!(validate_option_set(&set, kind), Ok(()));
        let other = ScenarioKind::ALL[(k + 1) % 4];
        prop_assert!(validate_option_set(&set, other).is_err());
    }

    #[test]
    fn payloads_round_trip(text in "\\PC{0,40}", index in 0usize..8) {
        for payload in [
            ChatPayload::SubmitDraft { text: text.clone() },
            ChatPayload::SelectOption { index },
            ChatPayload::ContinuePrompt { prefilled_text: text.clone() },
        ] {
            let json = serde_json::to_string(&payload).unwrap();
            prop_assert_eq!(serde_json::from_str::<ChatPayload>(&json).unwrap(), payload);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_pick_sequence_replays_to_its_snapshot(
        seed in 0u64..1_000,
        picks in prop::collection::vec(0usize..3, 8),
        name in "[A-Z][a-z]{2,8}",
    ) {
        let (driver, store) = driver();
        let id = SessionId::new(format!("p{seed}"));
        let profile = UserProfile::new(name.clone(), "they/them", "gardening");
        let mut live = driver.create_session(id.clone(), profile, seed).unwrap();
        let mut picks = picks.into_iter();
        for _ in 0..80 {
            let cmd = match &live.state.phase {
                SessionPhase::Completed => break,
                SessionPhase::Briefed => ClientCommand::StartChat,
                SessionPhase::AwaitingDraft { .. } => ClientCommand::SubmitDraft { text: "hello there".into() },
                SessionPhase::AwaitingSelection => ClientCommand::SelectOption { index: picks.next().unwrap() },
                SessionPhase::AwaitingContinue => ClientCommand::SubmitContinue {
                    text: live.state.current_turn().unwrap().feedback.as_ref().unwrap().continue_message.clone().unwrap(),
                },
                other => panic!("stalled in {other}"),
            };
            driver.handle_collect(&mut live, &cmd).unwrap();
        }
        prop_assert_eq!(&live.state.phase, &SessionPhase::Completed);

        let record = store.load(&id).unwrap();
        let folded = fold(&record.meta.initial, &record.events).unwrap();
        prop_assert_eq!(canonical_bytes(&folded), canonical_bytes(&record.snapshot.state));

        let t = Transcript::from_record(&record).unwrap();
        prop_assert_eq!(Transcript::from_json(&t.to_json()).unwrap(), t.clone());
        let redacted = t.redacted().to_json();
        let word = regex::Regex::new(&format!(r"(?i)\b{name}\b")).unwrap();
        prop_assert!(!word.is_match(&redacted));
    }
}
