//! Turns engine directives into engine events: renders prompts, calls the
//! gateway, parses and validates the output, and regenerates on structural
//! failure.

mod artifacts;
pub mod parse;

pub use artifacts::{
    contains_emoji, validate_option_set, BestAlternative, CharacterMessage, Feedback, FeedbackKind,
    MessageOption, MessageOptionSet, MessageRole, OptionStyle, OptionViolation, OPTION_COUNT,
};
#[cfg(test)]
pub(crate) use artifacts::fixtures;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::content::{
    ContentBundle, ContentError, Linter, PromptContext, PromptText, ScenarioBrief, TaskId,
};
use crate::engine::{
    Directive, EngineError, EngineEvent, HistoryEntry, ScenarioKind, SessionPhase, SessionState,
    Speaker, UserProfile,
};
use crate::gateway::{Branch, Gateway, GatewayError};

/// Gateway calls allowed per generated artifact, first try included.
pub const MAX_CALLS_PER_ARTIFACT: u32 = 3;

/// Messages of conversation history included in each prompt.
pub const HISTORY_WINDOW: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrchestratorError {
    #[error("{task} generation failed: {source}")]
    GenerationFailed {
        task: TaskId,
        #[source]
        source: GatewayError,
    },
    #[error("option set invalid after {attempts} attempt(s): {violations:?}")]
    OptionValidationFailed { attempts: u32, violations: Vec<String> },
    #[error("{task} output invalid after {attempts} attempt(s): {reason}")]
    ValidationFailed {
        task: TaskId,
        attempts: u32,
        reason: String,
    },
    #[error("rendered {task} prompt uses banned terms: {terms:?}")]
    PromptPolicy { task: TaskId, terms: Vec<String> },
    #[error(transparent)]
    Content(#[from] ContentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("directive {directive} does not fit phase {phase}")]
    StaleDirective { directive: String, phase: String },
}

impl OrchestratorError {
    /// Short machine-readable code for error notices.
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::GenerationFailed { .. } => "generation_failed",
            OrchestratorError::OptionValidationFailed { .. } => "option_validation_failed",
            OrchestratorError::ValidationFailed { .. } => "validation_failed",
            OrchestratorError::PromptPolicy { .. } => "prompt_policy",
            OrchestratorError::Content(_) => "content",
            OrchestratorError::Engine(_) => "engine",
            OrchestratorError::StaleDirective { .. } => "stale_directive",
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    artifacts: AtomicU64,
    gateway_calls: AtomicU64,
    regenerations: AtomicU64,
    max_calls_per_artifact: AtomicU64,
    prompts_linted: AtomicU64,
    lint_violations: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OrchestratorStats {
    pub artifacts: u64,
    pub gateway_calls: u64,
    pub regenerations: u64,
    pub max_calls_per_artifact: u64,
    pub prompts_linted: u64,
    pub lint_violations: u64,
}

/// What a single generation needs besides its prompt.
struct Job<'a> {
    task: TaskId,
    kind: Option<ScenarioKind>,
    turn: Option<u32>,
    branch: Option<Branch>,
    vars: &'a BTreeMap<String, String>,
}

pub struct Orchestrator {
    content: Arc<ContentBundle>,
    gateway: Arc<Gateway>,
    linter: Arc<Linter>,
    counters: Counters,
}

impl Orchestrator {
    pub fn new(content: Arc<ContentBundle>, gateway: Arc<Gateway>) -> Self {
        let linter = Linter::new(&Default::default()).expect("default banned terms compile");
        Self::with_linter(content, gateway, Arc::new(linter))
    }

    pub fn with_linter(content: Arc<ContentBundle>, gateway: Arc<Gateway>, linter: Arc<Linter>) -> Self {
        Self {
            content,
            gateway,
            linter,
            counters: Counters::default(),
        }
    }

    pub fn content(&self) -> &ContentBundle {
        &self.content
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn stats(&self) -> OrchestratorStats {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::SeqCst);
        OrchestratorStats {
            artifacts: get(&c.artifacts),
            gateway_calls: get(&c.gateway_calls),
            regenerations: get(&c.regenerations),
            max_calls_per_artifact: get(&c.max_calls_per_artifact),
            prompts_linted: get(&c.prompts_linted),
            lint_violations: get(&c.lint_violations),
        }
    }

    fn render(&self, task: TaskId, ctx: &PromptContext) -> Result<PromptText, OrchestratorError> {
        let prompt = self.content.render(task, ctx)?;
        self.counters.prompts_linted.fetch_add(1, Ordering::SeqCst);
        let report = self.linter.lint(prompt.as_str());
        if !report.is_clean() {
            self.counters
                .lint_violations
                .fetch_add(report.violations.len() as u64, Ordering::SeqCst);
            return Err(OrchestratorError::PromptPolicy {
                task,
                terms: report.violations.into_iter().map(|v| v.term).collect(),
            });
        }
        Ok(prompt)
    }

    /// Calls the gateway until `accept` takes the output or the per-artifact
    /// call budget runs out.
    fn generate<T>(
        &self,
        job: Job<'_>,
        prompt: PromptText,
        accept: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, Failure> {
        self.counters.artifacts.fetch_add(1, Ordering::SeqCst);
        let mut reason = String::new();
        for attempt in 1..=MAX_CALLS_PER_ARTIFACT {
            let mut request = self.gateway.request(job.task, job.kind, prompt.clone());
            request.attempt = attempt;
            request.turn = job.turn;
            request.branch = job.branch;
            request.vars = job.vars.clone();
            self.counters.gateway_calls.fetch_add(1, Ordering::SeqCst);
            self.counters
                .max_calls_per_artifact
                .fetch_max(u64::from(attempt), Ordering::SeqCst);
            let text = self.gateway.complete(&request).map_err(Failure::Gateway)?.text;
            match accept(&text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::debug!(task = %job.task, attempt, reason = %e, "output rejected");
                    if attempt < MAX_CALLS_PER_ARTIFACT {
                        self.counters.regenerations.fetch_add(1, Ordering::SeqCst);
                    }
                    reason = e;
                }
            }
        }
        Err(Failure::Invalid(reason))
    }

    fn context(&self, conv: &Conversation<'_>, kind: Option<ScenarioKind>) -> PromptContext {
        PromptContext::new(kind)
            .with("profile", describe_profile(conv.profile))
            .with("topic", conv.profile.topic.clone())
            .with("character_name", conv.character_name)
            .with("history", render_history(conv))
            .with("kind", self.content.kind_guidance(kind))
    }

    pub fn generate_scenario(
        &self,
        profile: &UserProfile,
        character_name: &str,
    ) -> Result<ScenarioBrief, OrchestratorError> {
        profile.validate()?;
        let conv = Conversation {
            profile,
            character_name,
            history: &[],
        };
        let task = TaskId::Scenario;
        let prompt = self.render(task, &self.context(&conv, None))?;
        let vars = conv.vars();
        let topic = profile.topic.trim().to_lowercase();
        let name = character_name.trim().to_lowercase();
        let background = self
            .generate(Job::new(task, None, None, None, &vars), prompt, |text| {
                let bg = parse::background(text)?;
                let lower = bg.to_lowercase();
                if !lower.contains(&name) {
                    return Err("background does not name the character".into());
                }
                if !lower.contains(&topic) {
                    return Err("background does not mention the topic".into());
                }
                Ok(bg)
            })
            .map_err(|f| f.into_error(task))?;
        Ok(ScenarioBrief {
            background,
            instruction: self.content.instruction().to_string(),
        })
    }

    pub fn generate_options(
        &self,
        conv: &Conversation<'_>,
        turn: u32,
        seed: u64,
        draft: &str,
        kind: ScenarioKind,
    ) -> Result<MessageOptionSet, OrchestratorError> {
        let task = TaskId::Options;
        let ctx = self.context(conv, Some(kind)).with("draft", draft);
        let prompt = self.render(task, &ctx)?;
        let mut vars = conv.vars();
        vars.insert("draft".into(), draft.to_string());
        let mut set = self
            .generate(Job::new(task, Some(kind), Some(turn), None, &vars), prompt, |text| {
                let set = parse::option_set(text, kind)?;
                validate_option_set(&set, kind).map_err(|v| {
                    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
                })?;
                Ok(set)
            })
            .map_err(|f| match f {
                Failure::Invalid(reason) => OrchestratorError::OptionValidationFailed {
                    attempts: MAX_CALLS_PER_ARTIFACT,
                    violations: reason.split("; ").map(str::to_string).collect(),
                },
                other => other.into_error(task),
            })?;
        for (option, pos) in set.options.iter_mut().zip(display_order(seed, turn)) {
            option.display_position = pos;
        }
        Ok(set)
    }

    /// The character's answer to the option the user sent. The role follows
    /// from the branch: the appropriate option gets a normal reply, any other
    /// gets a clarification or, in blunt turns, a follow-up.
    pub fn generate_character_response(
        &self,
        conv: &Conversation<'_>,
        turn: u32,
        set: &MessageOptionSet,
        selected: usize,
    ) -> Result<CharacterMessage, OrchestratorError> {
        let task = TaskId::Response;
        let kind = set.kind;
        let sent = option_text(set, selected)?;
        let (branch, role) = if selected == set.appropriate_index {
            (Branch::Appropriate, MessageRole::NormalReply)
        } else if kind.clarifies_on_misread() {
            (Branch::Misread, MessageRole::Clarification)
        } else {
            (Branch::Misread, MessageRole::BluntFollowUp)
        };
        let ctx = self.context(conv, Some(kind)).with("selected", sent);
        let prompt = self.render(task, &ctx)?;
        let vars = self.branch_vars(conv, set, sent);
        let text = self
            .generate(Job::new(task, Some(kind), Some(turn), Some(branch), &vars), prompt, |text| {
                let msg = parse::message(text)?;
                if role == MessageRole::Clarification {
                    parse::check_clarification(&msg)?;
                }
                Ok(msg)
            })
            .map_err(|f| f.into_error(task))?;
        Ok(CharacterMessage { text, role })
    }

    pub fn generate_blunt_trigger(
        &self,
        conv: &Conversation<'_>,
        turn: u32,
    ) -> Result<CharacterMessage, OrchestratorError> {
        let task = TaskId::BluntTrigger;
        let kind = Some(ScenarioKind::MisperceivedBlunt);
        let prompt = self.render(task, &self.context(conv, kind))?;
        let vars = conv.vars();
        let text = self
            .generate(Job::new(task, kind, Some(turn), None, &vars), prompt, |text| {
                let msg = parse::message(text)?;
                parse::check_blunt_trigger(&msg)?;
                Ok(msg)
            })
            .map_err(|f| f.into_error(task))?;
        Ok(CharacterMessage {
            text,
            role: MessageRole::BluntTrigger,
        })
    }

    /// Feedback for the branch the selection implies. `conv` should already
    /// include the character's response.
    pub fn generate_feedback(
        &self,
        conv: &Conversation<'_>,
        turn: u32,
        set: &MessageOptionSet,
        selected: usize,
    ) -> Result<Feedback, OrchestratorError> {
        let task = TaskId::Feedback;
        let kind = set.kind;
        let sent = option_text(set, selected)?;
        let (branch, expected) = if selected == set.appropriate_index {
            (Branch::Appropriate, FeedbackKind::Positive)
        } else {
            (Branch::Misread, FeedbackKind::Constructive)
        };
        let ctx = self
            .context(conv, Some(kind))
            .with("option_set", render_option_set(set))
            .with("selected", sent);
        let prompt = self.render(task, &ctx)?;
        let vars = self.branch_vars(conv, set, sent);
        self.generate(Job::new(task, Some(kind), Some(turn), Some(branch), &vars), prompt, |text| {
            parse::feedback(text, expected, set)
        })
        .map_err(|f| f.into_error(task))
    }

    pub fn generate_continue_reply(
        &self,
        conv: &Conversation<'_>,
        turn: u32,
        kind: ScenarioKind,
        continue_text: &str,
    ) -> Result<CharacterMessage, OrchestratorError> {
        let task = TaskId::ContinueReply;
        let ctx = self.context(conv, Some(kind)).with("draft", continue_text);
        let prompt = self.render(task, &ctx)?;
        let mut vars = conv.vars();
        vars.insert("draft".into(), continue_text.to_string());
        let text = self
            .generate(Job::new(task, Some(kind), Some(turn), None, &vars), prompt, parse::message)
            .map_err(|f| f.into_error(task))?;
        Ok(CharacterMessage {
            text,
            role: MessageRole::ContinueReply,
        })
    }

    /// Reply to a free-turn message.
    pub fn generate_free_reply(
        &self,
        conv: &Conversation<'_>,
        turn: u32,
        draft: &str,
    ) -> Result<CharacterMessage, OrchestratorError> {
        let task = TaskId::Response;
        let ctx = self.context(conv, None).with("selected", draft);
        let prompt = self.render(task, &ctx)?;
        let mut vars = conv.vars();
        vars.insert("draft".into(), draft.to_string());
        vars.insert("selected".into(), draft.to_string());
        let text = self
            .generate(Job::new(task, None, Some(turn), None, &vars), prompt, parse::message)
            .map_err(|f| f.into_error(task))?;
        Ok(CharacterMessage {
            text,
            role: MessageRole::NormalReply,
        })
    }

    fn branch_vars(
        &self,
        conv: &Conversation<'_>,
        set: &MessageOptionSet,
        sent: &str,
    ) -> BTreeMap<String, String> {
        let mut vars = conv.vars();
        vars.insert("selected".into(), sent.to_string());
        if let Some(a) = set.appropriate() {
            vars.insert("appropriate".into(), a.text.clone());
        }
        vars
    }

    /// The next engine event that makes progress on `directive`, or `None`
    /// when the directive is for the client rather than the generators.
    pub fn next_event(
        &self,
        state: &SessionState,
        directive: &Directive,
    ) -> Result<Option<EngineEvent>, OrchestratorError> {
        let stale = || OrchestratorError::StaleDirective {
            directive: format!("{directive:?}"),
            phase: state.phase.to_string(),
        };
        let Some(record) = state.current_turn() else {
            return match directive {
                Directive::SessionCompleted => Ok(None),
                _ => Err(stale()),
            };
        };
        let turn = record.turn;
        let history = state.history();
        let conv = Conversation::of(state, &history);
        let for_turn = |t: u32| if t == turn { Ok(()) } else { Err(stale()) };

        let event = match directive {
            Directive::NeedBluntTrigger { turn: t } => {
                for_turn(*t)?;
                let msg = self.generate_blunt_trigger(&conv, turn)?;
                EngineEvent::BluntTriggerIssued { text: msg.text }
            }
            Directive::NeedOptions { turn: t, kind } => {
                for_turn(*t)?;
                let draft = record.draft.as_deref().ok_or_else(stale)?;
                let option_set =
                    self.generate_options(&conv, turn, state.schedule.order_seed, draft, *kind)?;
                EngineEvent::PresentOptions { option_set }
            }
            Directive::NeedResponseAndFeedback { turn: t, selected, .. } => {
                for_turn(*t)?;
                let set = record.option_set.as_ref().ok_or_else(stale)?;
                if record.response().is_none() {
                    let msg = self.generate_character_response(&conv, turn, set, *selected)?;
                    EngineEvent::CharacterReplied { text: msg.text }
                } else {
                    let feedback = self.generate_feedback(&conv, turn, set, *selected)?;
                    EngineEvent::FeedbackIssued { feedback }
                }
            }
            Directive::NeedReply { turn: t } => {
                for_turn(*t)?;
                let draft = record.draft.as_deref().ok_or_else(stale)?;
                let msg = self.generate_free_reply(&conv, turn, draft)?;
                EngineEvent::CharacterReplied { text: msg.text }
            }
            Directive::NeedContinueReply { turn: t } => {
                for_turn(*t)?;
                let text = record.continue_message.as_deref().ok_or_else(stale)?;
                let kind = record.kind().ok_or_else(stale)?;
                let msg = self.generate_continue_reply(&conv, turn, kind, text)?;
                EngineEvent::CharacterReplied { text: msg.text }
            }
            Directive::PromptContinue { .. } | Directive::SessionCompleted => return Ok(None),
        };
        Ok(Some(event))
    }

    /// Generates every event `directive` calls for, checking each against a
    /// scratch copy of the state. The caller applies them to the real state.
    pub fn fulfill(
        &self,
        state: &SessionState,
        directive: &Directive,
    ) -> Result<Vec<EngineEvent>, OrchestratorError> {
        let mut scratch = state.clone();
        let mut events = Vec::new();
        while let Some(event) = self.next_event(&scratch, directive)? {
            scratch.apply(&event)?;
            events.push(event);
            if !scratch.pending_directives().contains(directive) {
                break;
            }
        }
        Ok(events)
    }
}

enum Failure {
    Gateway(GatewayError),
    Invalid(String),
}

impl Failure {
    fn into_error(self, task: TaskId) -> OrchestratorError {
        match self {
            Failure::Gateway(source) => OrchestratorError::GenerationFailed { task, source },
            Failure::Invalid(reason) => OrchestratorError::ValidationFailed {
                task,
                attempts: MAX_CALLS_PER_ARTIFACT,
                reason,
            },
        }
    }
}

impl<'a> Job<'a> {
    fn new(
        task: TaskId,
        kind: Option<ScenarioKind>,
        turn: Option<u32>,
        branch: Option<Branch>,
        vars: &'a BTreeMap<String, String>,
    ) -> Self {
        Self {
            task,
            kind,
            turn,
            branch,
            vars,
        }
    }
}

/// The parts of a session a prompt is built from.
#[derive(Debug, Clone, Copy)]
pub struct Conversation<'a> {
    pub profile: &'a UserProfile,
    pub character_name: &'a str,
    pub history: &'a [HistoryEntry],
}

impl<'a> Conversation<'a> {
    pub fn of(state: &'a SessionState, history: &'a [HistoryEntry]) -> Self {
        Self {
            profile: &state.profile,
            character_name: &state.character_name,
            history,
        }
    }

    /// Values scripted stub output may refer to.
    fn vars(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("character_name".to_string(), self.character_name.to_string()),
            ("character_name_lower".to_string(), self.character_name.to_lowercase()),
            ("first_name".to_string(), self.profile.first_name.clone()),
            ("topic".to_string(), self.profile.topic.clone()),
        ])
    }
}

fn option_text(set: &MessageOptionSet, index: usize) -> Result<&str, OrchestratorError> {
    set.options
        .get(index)
        .map(|o| o.text.as_str())
        .ok_or(OrchestratorError::Engine(EngineError::UnknownOptionIndex { index }))
}

fn describe_profile(profile: &UserProfile) -> String {
    let pronouns = profile.pronouns.trim();
    if pronouns.is_empty() {
        format!("{}, interested in {}", profile.first_name.trim(), profile.topic.trim())
    } else {
        format!(
            "{} ({pronouns}), interested in {}",
            profile.first_name.trim(),
            profile.topic.trim()
        )
    }
}

fn render_history(conv: &Conversation<'_>) -> String {
    let recent = &conv.history[conv.history.len().saturating_sub(HISTORY_WINDOW)..];
    if recent.is_empty() {
        return "(no messages yet)".to_string();
    }
    recent
        .iter()
        .map(|e| {
            let who = match e.speaker {
                Speaker::User => conv.profile.first_name.as_str(),
                Speaker::Character => conv.character_name,
            };
            format!("{who}: {}", e.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_option_set(set: &MessageOptionSet) -> String {
    set.options
        .iter()
        .zip(&set.hidden_rationales)
        .enumerate()
        .map(|(i, (o, why))| {
            let mark = if i == set.appropriate_index {
                "appropriate"
            } else {
                "could be misread"
            };
            format!("{}. \"{}\" ({mark}) {why}", i + 1, o.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Display positions for the three options of `turn`, derived from the
/// session seed.
pub fn display_order(seed: u64, turn: u32) -> [u8; OPTION_COUNT] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(turn) ^ 0x5EED_D15B_1A7E_0000);
    let mut order = [0, 1, 2];
    order.shuffle(&mut rng);
    order
}

/// Whether the session is waiting on generated content rather than on the
/// user.
pub fn awaits_generation(state: &SessionState) -> bool {
    matches!(
        state.phase,
        SessionPhase::AwaitingOptions | SessionPhase::AwaitingResponse | SessionPhase::AwaitingReply
    ) || !state
        .pending_directives()
        .iter()
        .all(|d| matches!(d, Directive::PromptContinue { .. } | Directive::SessionCompleted))
}
