use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ContentError;
use crate::engine::ScenarioKind;

/// Generation tasks, one prompt template each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Scenario,
    Options,
    Response,
    BluntTrigger,
    Feedback,
    ContinueReply,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Scenario,
        TaskId::Options,
        TaskId::Response,
        TaskId::BluntTrigger,
        TaskId::Feedback,
        TaskId::ContinueReply,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            TaskId::Scenario => "scenario",
            TaskId::Options => "options",
            TaskId::Response => "response",
            TaskId::BluntTrigger => "blunt_trigger",
            TaskId::Feedback => "feedback",
            TaskId::ContinueReply => "continue_reply",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

pub const PLACEHOLDERS: [&str; 8] = [
    "profile",
    "topic",
    "character_name",
    "history",
    "draft",
    "kind",
    "option_set",
    "selected",
];

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("placeholder pattern"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(rename = "task")]
    pub task_id: TaskId,
    #[serde(rename = "text")]
    pub template_text: String,
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for cap in PLACEHOLDER.captures_iter(&self.template_text) {
            let name = cap.get(1).expect("group 1").as_str();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }

    pub(crate) fn check_placeholders(&self) -> Result<(), ContentError> {
        match self
            .placeholders()
            .into_iter()
            .find(|p| !PLACEHOLDERS.contains(p))
        {
            Some(unknown) => Err(ContentError::UnknownPlaceholder {
                task: self.task_id,
                name: unknown.to_string(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    #[serde(rename = "output")]
    pub sample_output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExemplarKey {
    pub task: TaskId,
    pub kind: Option<ScenarioKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExemplarBank {
    pub entries: BTreeMap<ExemplarKey, Vec<Exemplar>>,
}

impl ExemplarBank {
    pub fn get(&self, task: TaskId, kind: Option<ScenarioKind>) -> &[Exemplar] {
        self.entries
            .get(&ExemplarKey { task, kind })
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn insert(&mut self, task: TaskId, kind: Option<ScenarioKind>, samples: Vec<Exemplar>) {
        self.entries
            .entry(ExemplarKey { task, kind })
            .or_default()
            .extend(samples);
    }
}

/// Values for a template's placeholders plus the scenario kind used to pick
/// exemplars.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    pub values: BTreeMap<String, String>,
    pub kind: Option<ScenarioKind>,
}

impl PromptContext {
    pub fn new(kind: Option<ScenarioKind>) -> Self {
        Self {
            values: BTreeMap::new(),
            kind,
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.values.insert(name.to_string(), value.into());
        self
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.values.insert(name.to_string(), value.into());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptText(pub String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Substitutes every placeholder of `template` from `values`.
pub fn substitute(text: &str, values: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for cap in PLACEHOLDER.captures_iter(text) {
        let whole = cap.get(0).expect("group 0");
        let name = cap.get(1).expect("group 1").as_str();
        let value = values.get(name).ok_or_else(|| name.to_string())?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Renders a template and appends the exemplars for its (task, kind) as
/// sample outputs.
pub fn render_prompt(
    template: &PromptTemplate,
    context: &PromptContext,
    bank: &ExemplarBank,
) -> Result<PromptText, ContentError> {
    let body = substitute(template.template_text.trim(), &context.values)
        .map_err(|name| ContentError::MissingPlaceholder { name })?;

    let mut out = body;
    let samples = bank.get(template.task_id, context.kind);
    if !samples.is_empty() {
        out.push_str("\n\nSample outputs:\n");
        for (i, sample) in samples.iter().enumerate() {
            out.push_str(&format!(
                "\n### Sample {}\nInput: {}\nOutput:\n{}\n",
                i + 1,
                sample.input.trim(),
                sample.sample_output.trim()
            ));
        }
    }
    Ok(PromptText(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> PromptTemplate {
        PromptTemplate {
            task_id: TaskId::Options,
            template_text: "Rewrite \"{draft}\" for {character_name}. {draft}".into(),
        }
    }

    #[test]
    fn substitutes_every_occurrence() {
        let ctx = PromptContext::new(None)
            .with("draft", "hi")
            .with("character_name", "Julia");
        let out = render_prompt(&template(), &ctx, &ExemplarBank::default()).unwrap();
        assert_eq!(out.as_str(), "Rewrite \"hi\" for Julia. hi");
    }

    #[test]
    fn missing_value_is_named() {
        let ctx = PromptContext::new(None).with("draft", "hi");
        assert_eq!(
            render_prompt(&template(), &ctx, &ExemplarBank::default()),
            Err(ContentError::MissingPlaceholder {
                name: "character_name".into()
            })
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let ctx = PromptContext::new(None)
            .with("draft", "{character_name}")
            .with("character_name", "Julia");
        let out = render_prompt(&template(), &ctx, &ExemplarBank::default()).unwrap();
        assert_eq!(out.as_str(), "Rewrite \"{character_name}\" for Julia. {character_name}");
    }

    #[test]
    fn exemplars_follow_the_body() {
        let mut bank = ExemplarBank::default();
        bank.insert(
            TaskId::Options,
            Some(ScenarioKind::IndirectSpeechAct),
            vec![Exemplar {
                input: "in".into(),
                sample_output: "out".into(),
            }],
        );
        let ctx = PromptContext::new(Some(ScenarioKind::IndirectSpeechAct))
            .with("draft", "hi")
            .with("character_name", "Julia");
        let out = render_prompt(&template(), &ctx, &bank).unwrap();
        assert!(out.as_str().ends_with("### Sample 1\nInput: in\nOutput:\nout\n"));

        // a different kind gets no samples
        let ctx = PromptContext {
            kind: Some(ScenarioKind::EmojiVariable),
            ..ctx
        };
        let out = render_prompt(&template(), &ctx, &bank).unwrap();
        assert!(!out.as_str().contains("Sample outputs"));
    }

    #[test]
    fn placeholders_are_listed_once() {
        assert_eq!(template().placeholders(), vec!["draft", "character_name"]);
    }
}
