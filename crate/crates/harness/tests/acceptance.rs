//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use candor_core::content::{session_task_table, TaskId};
use candor_core::driver::SessionDriver;
use candor_core::engine::{ScenarioKind, SessionId, SessionPhase};
use candor_core::gateway::{route_for, Gateway, ProviderId};
use candor_core::orchestrator::{FeedbackKind, MessageOptionSet, OptionStyle, Orchestrator};
use candor_core::store::{canonical_bytes, fold, ChatEvent, ChatPayload, FileStore, SessionStore};
use candor_core::transcript::Transcript;
use candor_harness::fuzz::fuzz_events;
use candor_harness::goldens::{check_golden, export_goldens, golden_flows, GoldenFlow};
use candor_harness::routing::{live_config, verify_live_routing, RecordingTransport};
use candor_harness::run::{deterministic_clock, drive_until, events_by_turn, run_session_on};
use candor_harness::sweep::option_sweep;
use candor_harness::{run_session, Exec, PickPolicy, SessionScript};
use regex::Regex;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn session(seed: u64, policy: PickPolicy) -> Result<candor_harness::SessionRun, String> {
    run_session(&SessionScript::standard(seed, policy)).map_err(|e| e.to_string())
}

fn kind_of(tag: &str) -> Option<ScenarioKind> {
    ScenarioKind::ALL.into_iter().find(|k| k.tag() == tag)
}

fn full_session_structure() -> Outcome {
    let run = session(7, PickPolicy::RandomSeeded(7))?;
    ensure(run.report.passed(), || run.report.to_string())?;
    ensure(run.elapsed < Duration::from_secs(5), || format!("took {:?}", run.elapsed))?;
    ensure(run.network_calls == 0, || format!("{} network calls", run.network_calls))?;
    let t = run.transcript.ok_or("no transcript")?;
    let tags: Vec<&str> = t.turns.iter().map(|t| t.assignment.as_str()).collect();
    ensure(tags.len() == 10, || format!("{} turns", tags.len()))?;
    ensure(tags[..2] == ["free", "free"], || format!("opening turns {:?}", &tags[..2]))?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for tag in &tags[2..] {
        *counts.entry(tag).or_default() += 1;
    }
    let want: BTreeMap<&str, usize> = ScenarioKind::ALL.iter().map(|k| (k.tag(), 2)).collect();
    ensure(counts == want, || format!("scenario counts {counts:?}"))?;
    Ok(format!("2 free + 8 scenario turns in {:?}, 0 network calls", run.elapsed))
}

fn branching_table() -> Outcome {
    let mut cells: BTreeMap<(ScenarioKind, usize), usize> = BTreeMap::new();
    for index in 0..3 {
        let run = session(11 + index as u64, PickPolicy::Indexed(vec![index; 8]))?;
        ensure(run.report.passed(), || run.report.to_string())?;
        let record = run.record.ok_or("no record")?;
        let by_turn = events_by_turn(&record);
        let t = run.transcript.ok_or("no transcript")?;
        for turn in t.scenario_turns() {
            let kind = kind_of(&turn.assignment).ok_or("unknown kind")?;
            let set = turn.options.as_ref().ok_or("no options")?;
            let selected = turn.selected.ok_or("no pick")?;
            let fb = turn.feedback.as_ref().ok_or("no feedback")?;
            let events: Vec<&ChatEvent> = by_turn[&turn.turn].clone();
            let tags: Vec<&str> = events.iter().map(|e| e.payload.tag()).collect();
            let cell = format!("{kind} pick {selected}");
            if selected == set.appropriate_index {
                ensure(fb.kind == FeedbackKind::Positive, || format!("{cell}: not positive"))?;
                ensure(fb.best_alternative.is_none() && fb.continue_message.is_none(), || {
                    format!("{cell}: positive panel has repair parts")
                })?;
                ensure(!tags.contains(&"continue_prompt"), || format!("{cell}: gated"))?;
            } else {
                ensure(fb.kind == FeedbackKind::Constructive, || format!("{cell}: not constructive"))?;
                let alt = fb.best_alternative.as_ref().ok_or_else(|| format!("{cell}: no alternative"))?;
                ensure(alt.text == set.options[set.appropriate_index].text, || {
                    format!("{cell}: alternative is not the appropriate option")
                })?;
                let prefilled = fb.continue_message.clone().ok_or_else(|| format!("{cell}: no continue"))?;
                // the runner sends a draft at the gate before the continue message
                let gate = tags.iter().position(|t| *t == "continue_prompt");
                let sent = tags.iter().position(|t| *t == "submit_continue");
                let (Some(gate), Some(sent)) = (gate, sent) else {
                    return Err(format!("{cell}: gate not held: {tags:?}"));
                };
                let between = &events[gate + 1..sent];
                ensure(
                    between.len() == 1
                        && matches!(&between[0].payload, ChatPayload::ErrorNotice { code, .. } if code == "illegal_event"),
                    || format!("{cell}: draft at the gate not refused: {tags:?}"),
                )?;
                ensure(turn.continue_message.as_deref() == Some(prefilled.as_str()), || {
                    format!("{cell}: continue text differs from the prefilled one")
                })?;
            }
            *cells.entry((kind, selected)).or_default() += 1;
        }
    }
    ensure(cells.len() == 12, || format!("covered {} of 12 cells", cells.len()))?;
    Ok(format!("12 of 12 cells per table over {} turns", cells.values().sum::<usize>()))
}

fn position(seq: &[String], step: &str) -> Option<usize> {
    seq.iter().position(|s| s == step)
}

fn blunt_flow_ordering() -> Outcome {
    let committed = committed_goldens()?;
    let blunt = committed
        .iter()
        .find(|f| f.flow == ScenarioKind::MisperceivedBlunt.tag())
        .ok_or("no blunt golden")?;
    let seq = &blunt.sequence;
    let trigger = position(seq, "character:blunt_trigger");
    let draft = position(seq, "user:draft");
    let follow = position(seq, "character:blunt_follow_up");
    let feedback = position(seq, "system:feedback:constructive");
    ensure(trigger == Some(0) && draft.is_some_and(|d| d > 0), || format!("golden order {seq:?}"))?;
    ensure(follow.zip(feedback).is_some_and(|(a, b)| a < b), || format!("golden order {seq:?}"))?;
    let pick = blunt.turn.selected.ok_or("golden has no pick")?;
    let set = blunt.turn.options.as_ref().ok_or("golden has no options")?;
    ensure(set.options[pick].style == OptionStyle::Confrontational, || "golden pick is not confrontational".into())?;

    let mut turns = 0;
    for seed in 0..6 {
        let run = session(seed, PickPolicy::AlwaysWrong)?;
        let check = run.report.get("blunt_order").ok_or("no blunt check")?;
        ensure(check.passed, || format!("seed {seed}: {}", check.detail))?;
        turns += run
            .transcript
            .iter()
            .flat_map(|t| &t.turns)
            .filter(|t| t.kind() == Some(ScenarioKind::MisperceivedBlunt))
            .count();
    }
    Ok(format!("golden plus {turns} blunt turns in 6 sessions"))
}

fn routing() -> Outcome {
    let kinds = std::iter::once(None).chain(ScenarioKind::ALL.map(Some));
    let mut pairs = 0;
    for task in TaskId::ALL {
        for kind in kinds.clone() {
            pairs += 1;
            let want = if task == TaskId::Options && kind == Some(ScenarioKind::EmojiVariable) {
                ProviderId::EmojiModel
            } else {
                ProviderId::PrimaryModel
            };
            let got = route_for(task, kind, false);
            ensure(got == want, || format!("{task:?}/{kind:?} routes to {got:?}"))?;
            ensure(route_for(task, kind, true) == ProviderId::Stub, || format!("{task:?}/{kind:?} skips the stub"))?;
        }
    }
    let live = verify_live_routing(5).map_err(|e| e.to_string())?;
    ensure(live.report.passed(), || live.report.to_string())?;
    Ok(format!("{pairs} pairs enumerated, {} live calls routed", live.calls.len()))
}

fn prompt_policy() -> Outcome {
    // Wider than the shipped list on purpose.
    let banned = Regex::new(r"(?i)autis|asperger|neuro[\s-]*(divergen|diverse|typical)|\basd\b").unwrap();
    let mut prompts = 0;
    let mut covered = BTreeSet::new();
    for (seed, policy) in [(1, PickPolicy::AlwaysWrong), (2, PickPolicy::AlwaysAppropriate)] {
        let script = SessionScript::standard(seed, policy);
        let transport = Arc::new(RecordingTransport::new(script.stub.clone()));
        let gateway = Arc::new(Gateway::new(live_config(), transport.clone(), script.stub.clone()));
        let run = run_session_on(&script, gateway).map_err(|e| e.to_string())?;
        let lint = run.report.get("lint").ok_or("no lint check")?;
        ensure(lint.passed, || lint.detail.clone())?;
        ensure(run.stats.lint_violations == 0, || "linter flagged a prompt".into())?;
        for call in transport.calls() {
            if let Some(m) = banned.find(&call.prompt) {
                return Err(format!("{:?}/{:?} prompt contains {:?}", call.task, call.kind, m.as_str()));
            }
            covered.insert((call.task, call.kind));
            prompts += 1;
        }
    }
    let missing: Vec<_> = session_task_table().into_iter().filter(|p| !covered.contains(p)).collect();
    ensure(missing.is_empty(), || format!("templates never rendered: {missing:?}"))?;
    Ok(format!("{prompts} prompts over {} (task, kind) pairs, none banned", covered.len()))
}

/// Emoji presentation ranges, kept separate from the library's detector.
fn has_emoji(text: &str) -> bool {
    text.chars().any(|c| {
        matches!(c as u32,
            0x1F300..=0x1F5FF | 0x1F600..=0x1F64F | 0x1F680..=0x1F6FF | 0x1F900..=0x1F9FF
            | 0x1FA70..=0x1FAFF | 0x2600..=0x26FF | 0x2700..=0x27BF | 0x1F1E6..=0x1F1FF)
    })
}

fn set_problems(set: &MessageOptionSet) -> Option<String> {
    let texts: BTreeSet<String> = set.options.iter().map(|o| o.text.trim().to_lowercase()).collect();
    let positions: BTreeSet<u8> = set.options.iter().map(|o| o.display_position).collect();
    let (good, bad) = OptionStyle::pair_for(set.kind);
    let styles_ok = set
        .options
        .iter()
        .enumerate()
        .all(|(i, o)| o.style == if i == set.appropriate_index { good } else { bad });
    if set.options.len() != 3 || set.hidden_rationales.len() != 3 {
        Some("not three options".into())
    } else if texts.len() != 3 || texts.iter().any(|t| t.is_empty()) {
        Some("options empty or repeated".into())
    } else if positions != BTreeSet::from([0, 1, 2]) {
        Some("display positions not a permutation".into())
    } else if set.appropriate_index > 2 {
        Some("appropriate index out of range".into())
    } else if !styles_ok {
        Some("styles do not match the kind".into())
    } else if set.kind == ScenarioKind::EmojiVariable
        && set.options.iter().filter(|o| has_emoji(&o.text)).count() < 2
    {
        Some("fewer than two emoji options".into())
    } else {
        None
    }
}

fn option_set_validity() -> Outcome {
    let sweep = option_sweep(1000, 42).map_err(|e| e.to_string())?;
    ensure(sweep.sets.len() == 1000, || format!("{} sets, {:?}", sweep.sets.len(), sweep.failures.first()))?;
    let mut slots = [0u32; 3];
    let mut emoji_sets = 0;
    for (i, set) in sweep.sets.iter().enumerate() {
        if let Some(p) = set_problems(set) {
            return Err(format!("set {i}: {p}"));
        }
        emoji_sets += usize::from(set.kind == ScenarioKind::EmojiVariable);
        slots[set.options[set.appropriate_index].display_position as usize] += 1;
    }
    ensure(slots.iter().all(|c| (270..=400).contains(c)), || format!("slots {slots:?}"))?;
    ensure(sweep.report.passed(), || sweep.report.to_string())?;
    Ok(format!("1000 valid sets, {emoji_sets} emoji sets, slots {slots:?}"))
}

fn event_sourcing() -> Outcome {
    let runs = Exec::default().map((0..100u64).collect(), |seed| {
        let run = session(1000 + seed, PickPolicy::RandomSeeded(seed))?;
        let record = run.record.ok_or("no record")?;
        let folded = fold(&record.meta.initial, &record.events).map_err(|e| e.to_string())?;
        ensure(canonical_bytes(&folded) == canonical_bytes(&record.snapshot.state), || {
            format!("seed {seed}: fold differs from snapshot")
        })?;
        ensure(run.report.passed(), || format!("seed {seed}: {}", run.report))?;
        Ok::<usize, String>(record.events.len())
    });
    let events: usize = runs.into_iter().collect::<Result<Vec<_>, _>>()?.iter().sum();
    let restart = kill_and_restart()?;
    Ok(format!("100 sessions, {events} events fold to their snapshots; {restart}"))
}

fn file_driver(root: &Path, script: &SessionScript) -> Result<(SessionDriver, Arc<FileStore>), String> {
    let store = Arc::new(FileStore::open(root).map_err(|e| e.to_string())?);
    let orch = Orchestrator::new(
        Arc::new(candor_core::content::ContentBundle::builtin()),
        Arc::new(Gateway::stubbed(script.stub.clone())),
    );
    let driver = SessionDriver::new(Arc::new(orch), store.clone(), Arc::new(deterministic_clock()));
    Ok((driver, store))
}

/// Stops a file-backed session mid-turn, leaves an appended but unacked
/// event and a torn line behind, then restarts on the same directory.
fn kill_and_restart() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let script = SessionScript::standard(9, PickPolicy::AlwaysWrong);
    let id = SessionId::new("restart");
    let acked: Vec<ChatEvent>;
    let pending;
    {
        let (driver, store) = file_driver(dir.path(), &script)?;
        let mut live = driver
            .create_session(id.clone(), script.profile.clone(), script.seed)
            .map_err(|e| e.to_string())?;
        let stop = |s: &candor_core::engine::SessionState| {
            s.turns.len() >= 6 && s.phase == SessionPhase::AwaitingSelection
        };
        drive_until(&driver, &script, &mut live, &stop).map_err(|e| e.to_string())?;
        ensure(stop(&live.state), || format!("did not reach the stop point: {}", live.state.phase))?;
        acked = store.load(&id).map_err(|e| e.to_string())?.events;
        // crash after the append, before the snapshot and the ack
        pending = ChatEvent {
            event_id: live.last_event_id + 1,
            session_id: id.clone(),
            timestamp: acked.last().map(|e| e.timestamp).unwrap_or_default(),
            payload: ChatPayload::SelectOption { index: 0 },
        };
        store.append(&pending).map_err(|e| e.to_string())?;
    }
    let log = dir.path().join("restart").join("events.jsonl");
    let mut bytes = std::fs::read(&log).map_err(|e| e.to_string())?;
    bytes.extend_from_slice(br#"{"event_id":999,"session_id":"restart","timest"#);
    std::fs::write(&log, bytes).map_err(|e| e.to_string())?;

    let (driver, store) = file_driver(dir.path(), &script)?;
    let record = store.load(&id).map_err(|e| e.to_string())?;
    ensure(record.events.starts_with(&acked), || "acked events lost or changed after restart".into())?;
    let extra = &record.events[acked.len()..];
    ensure(extra == std::slice::from_ref(&pending), || format!("{} events past the acked prefix", extra.len()))?;
    let mut live = driver.open(&id).map_err(|e| e.to_string())?;
    ensure(live.state.phase == SessionPhase::AwaitingResponse, || format!("resumed in {}", live.state.phase))?;
    let stall = drive_until(&driver, &script, &mut live, &|_| false).map_err(|e| e.to_string())?;
    ensure(stall.is_none() && live.state.phase == SessionPhase::Completed, || {
        format!("resumed session did not finish: {stall:?}")
    })?;
    let final_record = store.load(&id).map_err(|e| e.to_string())?;
    ensure(final_record.events.starts_with(&record.events), || "history rewritten after resume".into())?;
    let t = Transcript::from_record(&final_record).map_err(|e| e.to_string())?;
    ensure(t.completed && t.turns.len() == 10, || "resumed transcript incomplete".into())?;
    Ok(format!(
        "restart kept {} acked + 1 unacked event and finished",
        acked.len()
    ))
}

fn fuzz_safety() -> Outcome {
    let r = fuzz_events(2024, 10_000).map_err(|e| e.to_string())?;
    ensure(r.report.passed(), || r.report.to_string())?;
    let s = &r.stats;
    ensure(s.crashes == 0 && s.broken_states == 0 && s.dirty_rejections == 0, || format!("{s:?}"))?;
    Ok(format!(
        "10000 walks, {} events, {} rejected cleanly, 0 violations, 0 crashes",
        s.events, s.rejected
    ))
}

fn committed_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("goldens")
}

fn committed_goldens() -> Result<Vec<GoldenFlow>, String> {
    ScenarioKind::ALL
        .into_iter()
        .map(|k| {
            let path = committed_dir().join(GoldenFlow::file_name(k));
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        })
        .collect()
}

fn golden_transcripts() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = export_goldens(a.path()).map_err(|e| e.to_string())?;
    let second = export_goldens(b.path()).map_err(|e| e.to_string())?;
    ensure(first.len() == 4 && second.len() == 4, || "expected four goldens".into())?;
    for (x, y) in first.iter().zip(&second) {
        let name = x.file_name().ok_or("bad path")?;
        let (bx, by) = (std::fs::read(x).map_err(|e| e.to_string())?, std::fs::read(y).map_err(|e| e.to_string())?);
        ensure(bx == by, || format!("{name:?} differs between exports"))?;
        let committed = std::fs::read(committed_dir().join(name)).map_err(|e| e.to_string())?;
        ensure(bx == committed, || format!("{name:?} differs from the committed fixture"))?;
    }
    for flow in committed_goldens()?.iter().chain(&golden_flows().map_err(|e| e.to_string())?) {
        let problems = check_golden(flow);
        ensure(problems.is_empty(), || problems.join("; "))?;
    }
    Ok("4 goldens byte-stable, matching fixtures and flow shapes".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("full_session_structure", full_session_structure),
        ("branching_table", branching_table),
        ("blunt_flow_ordering", blunt_flow_ordering),
        ("routing", routing),
        ("prompt_policy", prompt_policy),
        ("option_set_validity", option_set_validity),
        ("event_sourcing", event_sourcing),
        ("fuzz_safety", fuzz_safety),
        ("golden_transcripts", golden_transcripts),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<24} {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
