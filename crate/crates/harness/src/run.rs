//! Drives one scripted session in-process against the stub provider and
//! checks the result against every structural rule of the simulation.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use candor_core::content::{ContentBundle, Linter};
use candor_core::driver::{ClientCommand, LiveSession, SessionDriver, SteppingClock};
use candor_core::engine::{ScenarioKind, SessionId, SessionPhase, SessionState, Speaker};
use candor_core::gateway::{route_for, CallRecord, Gateway, ProviderId};
use candor_core::orchestrator::{
    awaits_generation, validate_option_set, FeedbackKind, MessageRole, Orchestrator, OrchestratorStats,
    MAX_CALLS_PER_ARTIFACT,
};
use candor_core::store::{canonical_bytes, fold, ChatEvent, ChatPayload, MemoryStore, SessionRecord, SessionStore};
use candor_core::transcript::{Transcript, TranscriptTurn};
use chrono::{TimeDelta, TimeZone, Utc};

use crate::report::InvariantReport;
use crate::script::{Picker, SessionScript};
use crate::HarnessError;

/// Upper bound on client commands for one session; a correct session needs
/// well under half of this.
const MAX_COMMANDS: usize = 120;

pub const PROBE_DRAFT: &str = "anyway, let's talk about something else";

pub fn deterministic_clock() -> SteppingClock {
    SteppingClock::new(
        Utc.with_ymd_and_hms(2025, 1, 6, 15, 0, 0).unwrap(),
        TimeDelta::seconds(2),
    )
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    /// Absent only when the session could not be created.
    pub transcript: Option<Transcript>,
    pub record: Option<SessionRecord>,
    pub report: InvariantReport,
    pub calls: Vec<CallRecord>,
    pub stats: OrchestratorStats,
    pub network_calls: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
struct Probes {
    /// turn -> whether the draft sent at the gate was refused
    results: BTreeMap<u32, bool>,
}

/// Runs `script` to completion. Engine and generation failures become
/// failed checks; only a script that runs out is an error.
pub fn run_session(script: &SessionScript) -> Result<SessionRun, HarnessError> {
    run_session_on(script, Arc::new(Gateway::stubbed(script.stub.clone())))
}

/// Like [`run_session`] but over any gateway. Outside stub mode the
/// hermetic check is dropped and routing is checked against live providers.
pub fn run_session_on(script: &SessionScript, gateway: Arc<Gateway>) -> Result<SessionRun, HarnessError> {
    script.validate()?;
    let started = Instant::now();
    let content = Arc::new(ContentBundle::builtin());
    let orchestrator = Arc::new(Orchestrator::new(content.clone(), gateway.clone()));
    let store = Arc::new(MemoryStore::new());
    let driver = SessionDriver::new(orchestrator.clone(), store.clone(), Arc::new(deterministic_clock()));
    let id = SessionId::new(script.session_id.clone());

    let mut report = InvariantReport::new();
    let mut probes = Probes::default();
    let created = driver.create_session(id.clone(), script.profile.clone(), script.seed);
    let (transcript, record) = match created {
        Err(e) => {
            report.check("session_created", false, e.to_string());
            (None, None)
        }
        Ok(mut live) => {
            report.check("session_created", true, format!("character {}", live.state.character_name));
            let stall = drive(&driver, script, &mut live, Some(&mut probes), &|_| false)?;
            let record = store
                .load(&id)
                .map_err(|e| HarnessError::Setup(format!("reloading session: {e}")))?;
            let transcript = Transcript::from_record(&record);
            match transcript {
                Ok(t) => {
                    evaluate(&mut report, &live, &record, &t, &probes, stall, script.probe_gates);
                    (Some(t), Some(record))
                }
                Err(e) => {
                    report.check("transcript", false, e.to_string());
                    (None, Some(record))
                }
            }
        }
    };

    let stats = orchestrator.stats();
    let calls = gateway.call_log();
    let network_calls = gateway.network_calls();
    check_lint(&mut report, &content, &stats);
    check_routing(&mut report, &calls, gateway.stub_mode());
    if gateway.stub_mode() {
        report.check(
            "hermetic",
            network_calls == 0,
            format!("{network_calls} network call(s), {} stub call(s)", calls.len()),
        );
    }
    report.check(
        "regeneration_bound",
        stats.max_calls_per_artifact <= u64::from(MAX_CALLS_PER_ARTIFACT),
        format!(
            "at most {} call(s) per artifact over {} artifact(s)",
            stats.max_calls_per_artifact, stats.artifacts
        ),
    );

    Ok(SessionRun {
        transcript,
        record,
        report,
        calls,
        stats,
        network_calls,
        elapsed: started.elapsed(),
    })
}

/// Plays the script on an already open session until it completes or
/// `stop` holds, without probing gates. A session left waiting on
/// generation is resumed with a retry. Returns where it stalled, if it did.
pub fn drive_until(
    driver: &SessionDriver,
    script: &SessionScript,
    live: &mut LiveSession,
    stop: &dyn Fn(&SessionState) -> bool,
) -> Result<Option<String>, HarnessError> {
    drive(driver, script, live, None, stop)
}

fn drive(
    driver: &SessionDriver,
    script: &SessionScript,
    live: &mut LiveSession,
    mut probes: Option<&mut Probes>,
    stop: &dyn Fn(&SessionState) -> bool,
) -> Result<Option<String>, HarnessError> {
    let mut picker = Picker::new(&script.policy);
    for _ in 0..MAX_COMMANDS {
        if stop(&live.state) {
            return Ok(None);
        }
        let turn = live.state.current_turn().cloned();
        let turn = turn.as_ref();
        let n = turn.map_or(0, |t| t.turn);
        let command = match &live.state.phase {
            SessionPhase::Completed => return Ok(None),
            _ if awaits_generation(&live.state) => ClientCommand::Retry,
            SessionPhase::Briefed => ClientCommand::StartChat,
            SessionPhase::AwaitingDraft { assignment } => ClientCommand::SubmitDraft {
                text: script.draft_for(n, assignment.kind())?,
            },
            SessionPhase::AwaitingSelection => {
                let Some(set) = turn.and_then(|t| t.option_set.as_ref()) else {
                    return Ok(Some(format!("turn {n} awaits a pick without options")));
                };
                ClientCommand::SelectOption {
                    index: picker.pick(set.appropriate_index, n)?,
                }
            }
            SessionPhase::AwaitingContinue => {
                let probes = probes.as_deref_mut().filter(|_| script.probe_gates);
                if let Some(probes) = probes.filter(|p| !p.results.contains_key(&n)) {
                    let before = live.state.clone();
                    let probe = ClientCommand::SubmitDraft {
                        text: PROBE_DRAFT.into(),
                    };
                    let events = handle(driver, live, &probe)?;
                    let refused = matches!(
                        events.as_slice(),
                        [ChatEvent { payload: ChatPayload::ErrorNotice { code, .. }, .. }] if code == "illegal_event"
                    ) && live.state == before;
                    probes.results.insert(n, refused);
                }
                let prefilled = turn
                    .and_then(|t| t.feedback.as_ref())
                    .and_then(|f| f.continue_message.clone());
                let Some(text) = prefilled else {
                    return Ok(Some(format!("turn {n} gated without a continue message")));
                };
                ClientCommand::SubmitContinue { text }
            }
            other => return Ok(Some(format!("stalled in {other} on turn {n}"))),
        };
        let events = handle(driver, live, &command)?;
        if let Some(ChatPayload::ErrorNotice { code, message }) = events
            .iter()
            .map(|e| &e.payload)
            .find(|p| matches!(p, ChatPayload::ErrorNotice { .. }))
        {
            return Ok(Some(format!("turn {n}: {code}: {message}")));
        }
    }
    Ok(Some(format!("no completion after {MAX_COMMANDS} commands")))
}

fn handle(
    driver: &SessionDriver,
    live: &mut LiveSession,
    command: &ClientCommand,
) -> Result<Vec<ChatEvent>, HarnessError> {
    driver
        .handle_collect(live, command)
        .map_err(|e| HarnessError::Setup(format!("storage failed: {e}")))
}

/// Pairs each logged event with the turn it belongs to.
pub fn events_by_turn(record: &SessionRecord) -> BTreeMap<u32, Vec<&ChatEvent>> {
    let mut state = record.meta.initial.clone();
    let mut out: BTreeMap<u32, Vec<&ChatEvent>> = BTreeMap::new();
    for event in &record.events {
        let before = state.current_turn().map(|t| t.turn);
        if let Some(e) = event.payload.engine_event() {
            if state.apply(&e).is_err() {
                continue;
            }
        }
        // StartChat belongs to the turn it opens.
        let turn = before.or(state.current_turn().map(|t| t.turn)).unwrap_or(0);
        out.entry(turn).or_default().push(event);
    }
    out
}

fn tags(events: &[&ChatEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.payload.tag()).collect()
}

fn position(events: &[&ChatEvent], tag: &str) -> Option<usize> {
    events.iter().position(|e| e.payload.tag() == tag)
}

fn evaluate(
    report: &mut InvariantReport,
    live: &LiveSession,
    record: &SessionRecord,
    t: &Transcript,
    probes: &Probes,
    stall: Option<String>,
    probed: bool,
) {
    let state = &live.state;
    report.check(
        "completed",
        stall.is_none() && state.phase == SessionPhase::Completed && t.completed,
        stall.unwrap_or_else(|| format!("{} turns", t.turns.len())),
    );
    check_schedule(report, t, state.schedule.violations());
    let by_turn = events_by_turn(record);
    check_gating(report, t, &by_turn, probes, probed);
    check_branches(report, t);
    check_blunt_order(report, t, &by_turn);
    check_option_sets(report, t);

    let replayed = fold(&record.meta.initial, &record.events);
    let sound = matches!(&replayed, Ok(s) if canonical_bytes(s) == canonical_bytes(&record.snapshot.state))
        && record.snapshot.state == *state
        && record.snapshot.through_event_id == record.events.len() as u64;
    report.check(
        "event_sourcing",
        sound,
        format!("{} events fold to the snapshot", record.events.len()),
    );
    report.expect_none("engine_invariants", state.violations(), "state consistent");
}

fn check_schedule(report: &mut InvariantReport, t: &Transcript, engine: Vec<String>) {
    let mut problems = engine;
    let kinds: Vec<Option<ScenarioKind>> = t.turns.iter().map(TranscriptTurn::kind).collect();
    if kinds.len() != 10 {
        problems.push(format!("{} turns instead of 10", kinds.len()));
    }
    if kinds.iter().take(2).any(Option::is_some) {
        problems.push("first two turns are not free".into());
    }
    if kinds.iter().skip(2).any(Option::is_none) {
        problems.push("free turn after the scenario rounds began".into());
    }
    for kind in ScenarioKind::ALL {
        let n = kinds.iter().filter(|k| **k == Some(kind)).count();
        if n != 2 {
            problems.push(format!("{kind} appears {n} time(s)"));
        }
    }
    report.expect_none("scheduler", problems, "2 free turns, then each kind twice");
}

fn check_gating(
    report: &mut InvariantReport,
    t: &Transcript,
    by_turn: &BTreeMap<u32, Vec<&ChatEvent>>,
    probes: &Probes,
    probed: bool,
) {
    let mut problems = Vec::new();
    let mut gates = 0;
    for turn in t.scenario_turns() {
        let events = by_turn.get(&turn.turn).map(Vec::as_slice).unwrap_or(&[]);
        let constructive = turn.feedback.as_ref().is_some_and(|f| f.kind == FeedbackKind::Constructive);
        let prompt = position(events, "continue_prompt");
        let sent = position(events, "submit_continue");
        if constructive {
            gates += 1;
            let prefilled = turn.feedback.as_ref().and_then(|f| f.continue_message.clone());
            if turn.continue_message.is_none() || turn.continue_message != prefilled {
                problems.push(format!("turn {}: continue message not sent as offered", turn.turn));
            }
            match (prompt, sent) {
                (Some(p), Some(s)) if p < s => {
                    if events[p..s].iter().any(|e| e.payload.tag() == "submit_draft") {
                        problems.push(format!("turn {}: draft accepted behind the gate", turn.turn));
                    }
                }
                _ => problems.push(format!("turn {}: gate not opened then closed", turn.turn)),
            }
            if probed && probes.results.get(&turn.turn) != Some(&true) {
                problems.push(format!("turn {}: draft at the gate was not refused", turn.turn));
            }
        } else if prompt.is_some() || sent.is_some() || turn.continue_message.is_some() {
            problems.push(format!("turn {}: gated after positive feedback", turn.turn));
        }
    }
    report.expect_none(
        "gating",
        problems,
        format!("{gates} gate(s), each held until the continue message"),
    );
}

fn check_branches(report: &mut InvariantReport, t: &Transcript) {
    let mut problems = Vec::new();
    for turn in t.scenario_turns() {
        let n = turn.turn;
        let (Some(set), Some(selected), Some(feedback)) = (&turn.options, turn.selected, &turn.feedback) else {
            problems.push(format!("turn {n}: incomplete"));
            continue;
        };
        let appropriate = selected == set.appropriate_index;
        if turn.picked_appropriate != Some(appropriate) {
            problems.push(format!("turn {n}: recorded pick outcome disagrees"));
        }
        let expected = if appropriate { FeedbackKind::Positive } else { FeedbackKind::Constructive };
        if feedback.kind != expected {
            problems.push(format!("turn {n}: {:?} feedback for this pick", feedback.kind));
        }
        if appropriate {
            if feedback.best_alternative.is_some() || feedback.continue_message.is_some() {
                problems.push(format!("turn {n}: positive feedback carries constructive parts"));
            }
        } else {
            let best = &set.options[set.appropriate_index].text;
            if feedback.best_alternative.as_ref().map(|b| &b.text) != Some(best) {
                problems.push(format!("turn {n}: best alternative is not the appropriate option"));
            }
            if feedback.continue_message.as_deref().is_none_or(|m| m.trim().is_empty()) {
                problems.push(format!("turn {n}: no continue message"));
            }
        }

        let Some(sent_at) = turn.messages.iter().position(|m| m.speaker == Speaker::User) else {
            problems.push(format!("turn {n}: no user message"));
            continue;
        };
        if turn.messages[sent_at].text != set.options[selected].text {
            problems.push(format!("turn {n}: sent text is not the picked option"));
        }
        let reply = turn.messages.get(sent_at + 1);
        let want = match (appropriate, turn.kind()) {
            (true, _) => MessageRole::NormalReply,
            (false, Some(ScenarioKind::MisperceivedBlunt)) => MessageRole::BluntFollowUp,
            (false, _) => MessageRole::Clarification,
        };
        match reply {
            Some(m) if m.speaker == Speaker::Character && m.role == Some(want) => {
                if want == MessageRole::Clarification && !poses_alternatives(&m.text) {
                    problems.push(format!("turn {n}: clarification does not contrast readings"));
                }
            }
            other => problems.push(format!(
                "turn {n}: expected a {want:?} reply, got {:?}",
                other.map(|m| m.role)
            )),
        }
        if !appropriate {
            let last = turn.messages.last().and_then(|m| m.role);
            if last != Some(MessageRole::ContinueReply) {
                problems.push(format!("turn {n}: no reply to the continue message"));
            }
        }
    }
    report.expect_none("branch", problems, "feedback and replies follow each pick");
}

/// A question offering two readings joined by a standalone "or".
fn poses_alternatives(text: &str) -> bool {
    text.contains('?')
        && text
            .split(|c: char| !c.is_alphanumeric() && c != '\'')
            .any(|w| w.eq_ignore_ascii_case("or"))
}

fn check_blunt_order(
    report: &mut InvariantReport,
    t: &Transcript,
    by_turn: &BTreeMap<u32, Vec<&ChatEvent>>,
) {
    let mut problems = Vec::new();
    for turn in &t.turns {
        let n = turn.turn;
        let events = by_turn.get(&n).map(Vec::as_slice).unwrap_or(&[]);
        let blunt = turn.kind() == Some(ScenarioKind::MisperceivedBlunt);
        let has_trigger = turn.messages.iter().any(|m| m.role == Some(MessageRole::BluntTrigger));
        if !blunt {
            if has_trigger {
                problems.push(format!("turn {n}: trigger outside a blunt turn"));
            }
            continue;
        }
        if turn.messages.first().and_then(|m| m.role) != Some(MessageRole::BluntTrigger) {
            problems.push(format!("turn {n}: does not open with the trigger"));
        }
        match (position(events, "blunt_trigger_issued"), position(events, "submit_draft")) {
            (Some(trigger), Some(draft)) if trigger < draft => {}
            _ => problems.push(format!("turn {n}: trigger does not precede the draft: {:?}", tags(events))),
        }
        if turn.picked_appropriate == Some(false) {
            let follow_up = events.iter().position(|e| {
                matches!(e.payload, ChatPayload::CharacterReplied { role: MessageRole::BluntFollowUp, .. })
            });
            match (follow_up, position(events, "feedback_presented")) {
                (Some(f), Some(fb)) if f < fb => {}
                _ => problems.push(format!("turn {n}: follow-up does not precede feedback")),
            }
        }
    }
    report.expect_none("blunt_order", problems, "trigger, draft, pick, follow-up, feedback");
}

fn check_option_sets(report: &mut InvariantReport, t: &Transcript) {
    let mut problems = Vec::new();
    let mut sets = 0;
    for turn in t.scenario_turns() {
        let (Some(set), Some(kind)) = (&turn.options, turn.kind()) else { continue };
        sets += 1;
        if let Err(v) = validate_option_set(set, kind) {
            problems.extend(v.iter().map(|v| format!("turn {}: {v}", turn.turn)));
        }
    }
    report.expect_none("option_sets", problems, format!("{sets} valid set(s)"));
}

fn check_lint(report: &mut InvariantReport, content: &ContentBundle, stats: &OrchestratorStats) {
    let mut problems: Vec<String> = content
        .lint_all(&Linter::default())
        .into_iter()
        .map(|(at, v)| format!("{at}: {v:?}"))
        .collect();
    if stats.lint_violations > 0 {
        problems.push(format!("{} rendered prompt(s) hit the banned list", stats.lint_violations));
    }
    if stats.prompts_linted < stats.artifacts {
        problems.push(format!(
            "{} prompt(s) linted for {} artifact(s)",
            stats.prompts_linted, stats.artifacts
        ));
    }
    report.expect_none(
        "lint",
        problems,
        format!("{} prompt(s) linted, none flagged", stats.prompts_linted),
    );
}

fn check_routing(report: &mut InvariantReport, calls: &[CallRecord], stub_mode: bool) {
    let mut problems = Vec::new();
    let (mut emoji, mut primary) = (0, 0);
    for call in calls {
        let live = route_for(call.task, call.kind, false);
        let expected = if stub_mode { ProviderId::Stub } else { live };
        if call.provider != expected {
            problems.push(format!("{:?} call reached {:?}, expected {expected:?}", call.task, call.provider));
        }
        let is_emoji_options = call.task == candor_core::content::TaskId::Options
            && call.kind == Some(ScenarioKind::EmojiVariable);
        match live {
            ProviderId::EmojiModel if is_emoji_options => emoji += 1,
            ProviderId::PrimaryModel if !is_emoji_options => primary += 1,
            other => problems.push(format!("{:?}/{:?} would route to {other:?}", call.task, call.kind)),
        }
    }
    report.expect_none(
        "routing",
        problems,
        format!("{emoji} call(s) for the emoji model, {primary} for the primary model"),
    );
}
