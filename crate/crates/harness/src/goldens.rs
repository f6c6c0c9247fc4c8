//! Reference flows, one per scenario kind, taken from a fixed session in
//! which every pick misses. Exported files are byte-stable for a given
//! build, so they double as regression fixtures.

use std::path::{Path, PathBuf};

use candor_core::content::TaskId;
use candor_core::engine::{ScenarioKind, UserProfile};
use candor_core::gateway::StubEntry;
use candor_core::content::ScenarioBrief;
use candor_core::store::{ChatEvent, ChatPayload};
use candor_core::transcript::TranscriptTurn;
use serde::{Deserialize, Serialize};

use crate::run::{events_by_turn, run_session};
use crate::script::{PickPolicy, SessionScript};
use crate::HarnessError;

pub const GOLDEN_SCHEMA_VERSION: u32 = 1;
/// Divisible by the size of the name pool, so the character is the first name.
pub const GOLDEN_SEED: u64 = 24;

pub const INDIRECT_DRAFT: &str = "How can I speed up a vision model running on an embedded device?";
pub const CAT_DRAFT: &str = "my cat figured out how to open the kitchen drawers this week.";
pub const BLUNT_TRIGGER: &str =
    "well, i'm not really interested in hearing about your cat anymore. can we discuss something else?";
pub const BLUNT_DRAFT: &str = "oh, sorry about that. what would you rather talk about?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenFlow {
    pub schema_version: u32,
    pub flow: String,
    pub seed: u64,
    pub character_name: String,
    pub profile: UserProfile,
    pub brief: ScenarioBrief,
    /// `speaker:step` labels in log order.
    pub sequence: Vec<String>,
    pub turn: TranscriptTurn,
}

impl GoldenFlow {
    pub fn file_name(kind: ScenarioKind) -> String {
        format!("golden_{}.json", kind.tag())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("golden serializes");
        s.push('\n');
        s
    }
}

/// The steps a missed pick must produce for `kind`.
pub fn expected_sequence(kind: ScenarioKind) -> Vec<&'static str> {
    let mut steps = vec!["user:draft", "system:options", "user:select"];
    if kind == ScenarioKind::MisperceivedBlunt {
        steps.insert(0, "character:blunt_trigger");
        steps.push("character:blunt_follow_up");
    } else {
        steps.push("character:clarification");
    }
    steps.extend([
        "system:feedback:constructive",
        "system:continue_prompt",
        "user:continue",
        "character:continue_reply",
    ]);
    steps
}

pub fn golden_script() -> SessionScript {
    let mut script = SessionScript::standard(GOLDEN_SEED, PickPolicy::AlwaysWrong);
    script.session_id = "golden".into();
    script.probe_gates = false;
    script.drafts[1] = CAT_DRAFT.into();
    script.kind_drafts.insert(ScenarioKind::IndirectSpeechAct, INDIRECT_DRAFT.into());
    script.kind_drafts.insert(ScenarioKind::MisperceivedBlunt, BLUNT_DRAFT.into());
    script.stub = script.stub.overlay([StubEntry::new(TaskId::BluntTrigger, format!("MESSAGE: {BLUNT_TRIGGER}"))
        .kind(ScenarioKind::MisperceivedBlunt)]);
    script
}

fn label(event: &ChatEvent) -> String {
    match &event.payload {
        ChatPayload::StartChat => "user:start".into(),
        ChatPayload::SubmitDraft { .. } => "user:draft".into(),
        ChatPayload::SelectOption { .. } => "user:select".into(),
        ChatPayload::SubmitContinue { .. } => "user:continue".into(),
        ChatPayload::BluntTriggerIssued { .. } => "character:blunt_trigger".into(),
        ChatPayload::CharacterReplied { role, .. } => format!("character:{}", snake(role)),
        ChatPayload::OptionsPresented { .. } => "system:options".into(),
        ChatPayload::FeedbackPresented { feedback } => format!("system:feedback:{}", snake(&feedback.kind)),
        ChatPayload::ContinuePrompt { .. } => "system:continue_prompt".into(),
        ChatPayload::SessionCompleted => "system:completed".into(),
        ChatPayload::ErrorNotice { code, .. } => format!("system:error:{code}"),
    }
}

fn snake<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Builds the four flows from the first turn of each kind.
pub fn golden_flows() -> Result<Vec<GoldenFlow>, HarnessError> {
    let run = run_session(&golden_script())?;
    if !run.report.passed() {
        return Err(HarnessError::Setup(format!("golden session failed:\n{}", run.report)));
    }
    let (Some(t), Some(record)) = (run.transcript, run.record) else {
        return Err(HarnessError::Setup("golden session left no record".into()));
    };
    let by_turn = events_by_turn(&record);
    ScenarioKind::ALL
        .into_iter()
        .map(|kind| {
            let turn = t
                .turns
                .iter()
                .find(|turn| turn.kind() == Some(kind))
                .ok_or_else(|| HarnessError::Setup(format!("no {kind} turn")))?;
            let sequence = by_turn
                .get(&turn.turn)
                .into_iter()
                .flatten()
                .map(|e| label(e))
                .filter(|l| l != "system:completed")
                .collect();
            Ok(GoldenFlow {
                schema_version: GOLDEN_SCHEMA_VERSION,
                flow: kind.tag().to_string(),
                seed: GOLDEN_SEED,
                character_name: t.character_name.clone(),
                profile: t.profile.clone(),
                brief: t.brief.clone(),
                sequence,
                turn: turn.clone(),
            })
        })
        .collect()
}

/// Differences between a flow and the steps its kind requires.
pub fn check_golden(flow: &GoldenFlow) -> Vec<String> {
    let Some(kind) = ScenarioKind::ALL.into_iter().find(|k| k.tag() == flow.flow) else {
        return vec![format!("unknown flow {:?}", flow.flow)];
    };
    let mut problems = Vec::new();
    if flow.sequence != expected_sequence(kind) {
        problems.push(format!("{}: sequence {:?}", flow.flow, flow.sequence));
    }
    if flow.turn.kind() != Some(kind) {
        problems.push(format!("{}: turn is {}", flow.flow, flow.turn.assignment));
    }
    problems
}

/// Writes one file per flow into `dir` and returns the paths.
pub fn export_goldens(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    golden_flows()?
        .into_iter()
        .zip(ScenarioKind::ALL)
        .map(|(flow, kind)| {
            let path = dir.join(GoldenFlow::file_name(kind));
            std::fs::write(&path, flow.to_json()).map_err(|e| HarnessError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use candor_core::engine::Speaker;
    use candor_core::orchestrator::MessageRole;

    #[test]
    fn flows_match_the_required_steps() {
        let flows = golden_flows().unwrap();
        assert_eq!(flows.len(), 4);
        for flow in &flows {
            assert_eq!(check_golden(flow), Vec::<String>::new());
            assert_eq!(flow.character_name, "Julia");
        }
    }

    #[test]
    fn indirect_flow_sends_the_scripted_draft() {
        let flows = golden_flows().unwrap();
        let indirect = &flows[0];
        assert_eq!(indirect.turn.draft.as_deref(), Some(INDIRECT_DRAFT));
    }

    #[test]
    fn blunt_flow_opens_with_the_cat_trigger() {
        let flows = golden_flows().unwrap();
        let blunt = flows.iter().find(|f| f.flow == "misperceived_blunt").unwrap();
        let first = &blunt.turn.messages[0];
        assert_eq!(first.speaker, Speaker::Character);
        assert_eq!(first.role, Some(MessageRole::BluntTrigger));
        assert_eq!(first.text, BLUNT_TRIGGER);
    }

    #[test]
    fn check_catches_a_reordered_flow() {
        let mut flow = golden_flows().unwrap().remove(3);
        flow.sequence.swap(0, 1);
        assert_eq!(check_golden(&flow).len(), 1);
    }
}
