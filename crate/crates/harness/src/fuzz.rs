//! Random walks over the session engine. Most steps are legal for the
//! current phase so walks get deep; the rest are random or corrupted events
//! that the engine must refuse without changing state.

use std::panic::{catch_unwind, AssertUnwindSafe};

use candor_core::content::ScenarioBrief;
use candor_core::engine::{
    Assignment, EngineEvent, ScenarioKind, SessionId, SessionPhase, SessionState, UserProfile,
};
use candor_core::orchestrator::{
    BestAlternative, Feedback, FeedbackKind, MessageOption, MessageOptionSet, OptionStyle,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::Exec;
use crate::report::InvariantReport;
use crate::HarnessError;

pub const STEPS_PER_WALK: usize = 96;
/// Percent of steps drawn from the legal generator.
pub const LEGAL_PERCENT: u32 = 70;

const WORDS: [&str; 12] = [
    "sure", "the", "window", "cat", "later", "really", "model", "maybe", "fine", "why", "drawer", "okay",
];
const EMOJI: [&str; 6] = ["🙂", "👍", "🙃", "😂", "🔥", "🤔"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkStats {
    pub events: u64,
    pub legal_generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub completed_walks: u64,
    pub crashes: u64,
    /// Rejected events that still changed the state.
    pub dirty_rejections: u64,
    /// Accepted events after which the state broke an invariant.
    pub broken_states: u64,
    /// Legal-generator events the engine refused.
    pub refused_legal: u64,
    pub first_problem: Option<String>,
}

impl WalkStats {
    fn merge(mut self, other: WalkStats) -> WalkStats {
        self.events += other.events;
        self.legal_generated += other.legal_generated;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.completed_walks += other.completed_walks;
        self.crashes += other.crashes;
        self.dirty_rejections += other.dirty_rejections;
        self.broken_states += other.broken_states;
        self.refused_legal += other.refused_legal;
        self.first_problem = self.first_problem.or(other.first_problem);
        self
    }

    fn problem(&mut self, walk: u64, step: usize, what: String) {
        if self.first_problem.is_none() {
            self.first_problem = Some(format!("walk {walk} step {step}: {what}"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub iterations: u64,
    pub stats: WalkStats,
    pub report: InvariantReport,
}

pub fn fuzz_events(seed: u64, iterations: u64) -> Result<FuzzReport, HarnessError> {
    fuzz_events_with(seed, iterations, Exec::default())
}

/// Runs `iterations` independent walks. Walk `i` draws from its own stream
/// of the seeded generator, so the result does not depend on `exec`.
pub fn fuzz_events_with(seed: u64, iterations: u64, exec: Exec) -> Result<FuzzReport, HarnessError> {
    if iterations == 0 {
        return Err(HarnessError::InvalidArgument("iterations must be at least 1".into()));
    }
    let stats = exec
        .map((0..iterations).collect(), |i| walk(seed, i))
        .into_iter()
        .fold(WalkStats::default(), WalkStats::merge);

    let mut report = InvariantReport::new();
    let where_ = stats.first_problem.clone().unwrap_or_default();
    report.check("no_crashes", stats.crashes == 0, format!("{} crash(es) {where_}", stats.crashes));
    report.check(
        "rejections_leave_state",
        stats.dirty_rejections == 0,
        format!("{} of {} rejection(s) changed state", stats.dirty_rejections, stats.rejected),
    );
    report.check(
        "accepted_states_consistent",
        stats.broken_states == 0,
        format!("{} of {} accepted event(s) broke an invariant", stats.broken_states, stats.accepted),
    );
    report.check(
        "legal_events_accepted",
        stats.refused_legal == 0,
        format!("{} of {} legal event(s) refused", stats.refused_legal, stats.legal_generated),
    );
    report.check(
        "coverage",
        stats.rejected > 0 && stats.accepted > 0,
        format!(
            "{} event(s), {} walk(s) reached completion",
            stats.events, stats.completed_walks
        ),
    );
    Ok(FuzzReport {
        seed,
        iterations,
        stats,
        report,
    })
}

fn fresh(rng: &mut ChaCha8Rng, walk: u64) -> SessionState {
    SessionState::new(
        SessionId::new(format!("fuzz-{walk}")),
        UserProfile::new("Mark", "he/him", "machine learning"),
        ScenarioBrief {
            background: "You are chatting with a new acquaintance.".into(),
            instruction: "Keep the conversation going.".into(),
        },
        "Julia",
        rng.random(),
    )
    .expect("fixed profile is valid")
}

fn walk(seed: u64, index: u64) -> WalkStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut stats = WalkStats::default();
    let mut state = fresh(&mut rng, index);

    for step in 0..STEPS_PER_WALK {
        let legal = rng.random_ratio(LEGAL_PERCENT, 100);
        let event = if legal {
            legal_event(&state, &mut rng)
        } else {
            noise_event(&state, &mut rng)
        };
        let Some(event) = event else {
            // Completed: nothing is legal any more.
            stats.completed_walks += 1;
            break;
        };
        stats.events += 1;
        stats.legal_generated += u64::from(legal);

        let before = state.clone();
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let mut next = state.clone();
            let result = next.apply(&event);
            (next, result)
        }));
        match outcome {
            Err(_) => {
                stats.crashes += 1;
                stats.problem(index, step, format!("panic on {}", event.name()));
                break;
            }
            Ok((next, Err(e))) => {
                stats.rejected += 1;
                if next != before {
                    stats.dirty_rejections += 1;
                    stats.problem(index, step, format!("{} refused but applied", event.name()));
                }
                if legal {
                    stats.refused_legal += 1;
                    stats.problem(index, step, format!("legal {} refused: {e}", event.name()));
                }
            }
            Ok((next, Ok(_))) => {
                stats.accepted += 1;
                let violations = next.violations();
                if !violations.is_empty() {
                    stats.broken_states += 1;
                    stats.problem(index, step, violations.join("; "));
                }
                state = next;
            }
        }
    }
    stats
}

fn text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..6);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Three distinct options with the styles and emoji the kind requires,
/// shown in a random order.
pub fn valid_option_set(kind: ScenarioKind, rng: &mut ChaCha8Rng) -> MessageOptionSet {
    let (good, bad) = OptionStyle::pair_for(kind);
    let appropriate = rng.random_range(0..3);
    let mut positions = [0u8, 1, 2];
    positions.shuffle(rng);
    let options = (0..3)
        .map(|i| {
            let mut body = format!("option {i}: {}", text(rng));
            if kind == ScenarioKind::EmojiVariable {
                body.push(' ');
                body.push_str(EMOJI[rng.random_range(0..EMOJI.len())]);
            }
            MessageOption {
                text: body,
                display_position: positions[i],
                style: if i == appropriate { good } else { bad },
            }
        })
        .collect();
    MessageOptionSet {
        kind,
        options,
        appropriate_index: appropriate,
        hidden_rationales: (0..3).map(|i| format!("rationale {i}")).collect(),
    }
}

pub fn valid_feedback(kind: FeedbackKind, rng: &mut ChaCha8Rng) -> Feedback {
    let constructive = kind == FeedbackKind::Constructive;
    Feedback {
        kind,
        heading: text(rng),
        body: text(rng),
        best_alternative: constructive.then(|| BestAlternative {
            text: text(rng),
            rationale: text(rng),
        }),
        continue_message: constructive.then(|| text(rng)),
    }
}

fn legal_event(state: &SessionState, rng: &mut ChaCha8Rng) -> Option<EngineEvent> {
    let turn = state.current_turn();
    Some(match &state.phase {
        SessionPhase::Completed | SessionPhase::Registering => return None,
        SessionPhase::Briefed => EngineEvent::StartChat,
        SessionPhase::AwaitingDraft {
            assignment: Assignment::Scenario(ScenarioKind::MisperceivedBlunt),
        } if turn.is_some_and(|t| t.blunt_trigger().is_none()) => {
            EngineEvent::BluntTriggerIssued { text: text(rng) }
        }
        SessionPhase::AwaitingDraft { .. } => EngineEvent::SubmitDraft { text: text(rng) },
        SessionPhase::AwaitingOptions => EngineEvent::PresentOptions {
            option_set: valid_option_set(turn?.kind()?, rng),
        },
        SessionPhase::AwaitingSelection => EngineEvent::SelectOption {
            index: rng.random_range(0..3),
        },
        SessionPhase::AwaitingResponse if turn?.response().is_none() => {
            EngineEvent::CharacterReplied { text: text(rng) }
        }
        SessionPhase::AwaitingResponse => {
            let kind = if turn?.picked_appropriate()? {
                FeedbackKind::Positive
            } else {
                FeedbackKind::Constructive
            };
            EngineEvent::FeedbackIssued {
                feedback: valid_feedback(kind, rng),
            }
        }
        SessionPhase::AwaitingContinue => EngineEvent::SubmitContinue { text: text(rng) },
        SessionPhase::AwaitingReply => EngineEvent::CharacterReplied { text: text(rng) },
    })
}

/// An arbitrary event, or a legal one with a defect. Either may happen to
/// be accepted; what matters is that the engine stays consistent.
fn noise_event(state: &SessionState, rng: &mut ChaCha8Rng) -> Option<EngineEvent> {
    if state.phase == SessionPhase::Completed && rng.random_ratio(1, 4) {
        return None;
    }
    let words = |rng: &mut ChaCha8Rng| {
        if rng.random_ratio(1, 3) {
            ["", "   ", "\n\t"][rng.random_range(0..3)].to_string()
        } else {
            text(rng)
        }
    };
    let kind = ScenarioKind::ALL[rng.random_range(0..4)];
    Some(match rng.random_range(0..8) {
        0 => EngineEvent::StartChat,
        1 => EngineEvent::SubmitDraft { text: words(rng) },
        2 => {
            let kind = state.current_turn().and_then(|t| t.kind()).unwrap_or(kind);
            EngineEvent::PresentOptions {
                option_set: corrupt_set(valid_option_set(kind, rng), rng),
            }
        }
        3 => EngineEvent::SelectOption {
            index: rng.random_range(0..6),
        },
        4 => EngineEvent::CharacterReplied { text: words(rng) },
        5 => {
            let kind = if rng.random_bool(0.5) {
                FeedbackKind::Positive
            } else {
                FeedbackKind::Constructive
            };
            EngineEvent::FeedbackIssued {
                feedback: corrupt_feedback(valid_feedback(kind, rng), rng),
            }
        }
        6 => EngineEvent::SubmitContinue { text: words(rng) },
        _ => EngineEvent::BluntTriggerIssued { text: words(rng) },
    })
}

fn corrupt_set(mut set: MessageOptionSet, rng: &mut ChaCha8Rng) -> MessageOptionSet {
    match rng.random_range(0..8) {
        0 => set.options[1].text = set.options[0].text.to_uppercase(),
        1 => set.options[2].display_position = set.options[0].display_position,
        2 => set.appropriate_index = rng.random_range(3..9),
        3 => {
            set.options.pop();
        }
        4 => set.hidden_rationales[rng.random_range(0..3)] = " ".into(),
        5 if set.kind == ScenarioKind::EmojiVariable => {
            for o in &mut set.options {
                o.text.retain(|c| c.is_ascii());
            }
        }
        5 => set.options[0].text = "\t".into(),
        6 => {
            let i = set.appropriate_index;
            set.options[i].style = OptionStyle::pair_for(set.kind).1;
        }
        _ => set.kind = ScenarioKind::ALL[(set.kind as usize + 1) % 4],
    }
    set
}

fn corrupt_feedback(mut fb: Feedback, rng: &mut ChaCha8Rng) -> Feedback {
    match rng.random_range(0..5) {
        0 => fb.heading.clear(),
        1 => fb.body = " ".into(),
        2 => {
            fb.best_alternative = match fb.best_alternative {
                Some(_) => None,
                None => Some(BestAlternative {
                    text: "x".into(),
                    rationale: "y".into(),
                }),
            }
        }
        3 => fb.continue_message = fb.continue_message.xor(Some("go on".into())),
        // flipped branch with otherwise well-formed parts
        _ => {
            let flipped = if fb.kind == FeedbackKind::Positive {
                FeedbackKind::Constructive
            } else {
                FeedbackKind::Positive
            };
            fb = valid_feedback(flipped, rng);
        }
    }
    fb
}
