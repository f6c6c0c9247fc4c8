use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EngineError;

/// The four communication challenges a scenario turn can stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    IndirectSpeechAct,
    FigurativeExpression,
    EmojiVariable,
    MisperceivedBlunt,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::IndirectSpeechAct,
        ScenarioKind::FigurativeExpression,
        ScenarioKind::EmojiVariable,
        ScenarioKind::MisperceivedBlunt,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ScenarioKind::IndirectSpeechAct => "indirect_speech_act",
            ScenarioKind::FigurativeExpression => "figurative_expression",
            ScenarioKind::EmojiVariable => "emoji_variable",
            ScenarioKind::MisperceivedBlunt => "misperceived_blunt",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::IndirectSpeechAct => "Indirect Speech Act",
            ScenarioKind::FigurativeExpression => "Figurative Expression",
            ScenarioKind::EmojiVariable => "Emoji with Variable Interpretations",
            ScenarioKind::MisperceivedBlunt => "Being Misperceived as Blunt",
        }
    }

    /// Whether a misread option makes the character ask for clarification
    /// (as opposed to explaining that no offense was meant).
    pub fn clarifies_on_misread(self) -> bool {
        !matches!(self, ScenarioKind::MisperceivedBlunt)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| format!("unknown scenario kind `{s}`"))
    }
}

/// What a turn is for: a free warm-up message or a staged scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "kind", rename_all = "snake_case")]
pub enum Assignment {
    Free,
    Scenario(ScenarioKind),
}

impl Assignment {
    pub fn kind(self) -> Option<ScenarioKind> {
        match self {
            Assignment::Free => None,
            Assignment::Scenario(k) => Some(k),
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Free => f.write_str("free"),
            Assignment::Scenario(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub first_name: String,
    pub pronouns: String,
    pub topic: String,
}

impl UserProfile {
    pub fn new(
        first_name: impl Into<String>,
        pronouns: impl Into<String>,
        topic: impl Into<String>,
    ) -> Self {
        Self {
            first_name: first_name.into(),
            pronouns: pronouns.into(),
            topic: topic.into(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.first_name.trim().is_empty() {
            return Err(EngineError::InvalidProfile { field: "first_name" });
        }
        if self.topic.trim().is_empty() {
            return Err(EngineError::InvalidProfile { field: "topic" });
        }
        Ok(())
    }
}

/// Opaque session identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
