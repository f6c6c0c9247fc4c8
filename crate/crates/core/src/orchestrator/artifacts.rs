//! Typed artifacts produced by the generators: option sets, character
//! messages and feedback panels.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::ScenarioKind;

pub const OPTION_COUNT: usize = 3;

/// How an option is phrased relative to the active scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionStyle {
    Direct,
    Indirect,
    Literal,
    Figurative,
    ClearEmoji,
    AmbiguousEmoji,
    Neutral,
    Confrontational,
}

impl OptionStyle {
    /// (style of the appropriate option, style of the two misleading ones)
    pub fn pair_for(kind: ScenarioKind) -> (OptionStyle, OptionStyle) {
        match kind {
            ScenarioKind::IndirectSpeechAct => (OptionStyle::Direct, OptionStyle::Indirect),
            ScenarioKind::FigurativeExpression => (OptionStyle::Literal, OptionStyle::Figurative),
            ScenarioKind::EmojiVariable => (OptionStyle::ClearEmoji, OptionStyle::AmbiguousEmoji),
            ScenarioKind::MisperceivedBlunt => (OptionStyle::Neutral, OptionStyle::Confrontational),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            OptionStyle::Direct => "direct",
            OptionStyle::Indirect => "indirect",
            OptionStyle::Literal => "literal",
            OptionStyle::Figurative => "figurative",
            OptionStyle::ClearEmoji => "clear_emoji",
            OptionStyle::AmbiguousEmoji => "ambiguous_emoji",
            OptionStyle::Neutral => "neutral",
            OptionStyle::Confrontational => "confrontational",
        }
    }

    pub fn from_tag(tag: &str) -> Option<OptionStyle> {
        use OptionStyle::*;
        [
            Direct,
            Indirect,
            Literal,
            Figurative,
            ClearEmoji,
            AmbiguousEmoji,
            Neutral,
            Confrontational,
        ]
        .into_iter()
        .find(|s| s.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageOption {
    pub text: String,
    pub display_position: u8,
    pub style: OptionStyle,
}

/// Three rephrasings of a user draft, exactly one of which avoids the
/// staged misunderstanding.
///
/// `appropriate_index` and `SelectOption` indices refer to positions in
/// `options`; `display_position` is only the order the client renders them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageOptionSet {
    pub kind: ScenarioKind,
    pub options: Vec<MessageOption>,
    pub appropriate_index: usize,
    pub hidden_rationales: Vec<String>,
}

impl MessageOptionSet {
    pub fn appropriate(&self) -> Option<&MessageOption> {
        self.options.get(self.appropriate_index)
    }

    /// Options sorted by the order the client shows them in.
    pub fn in_display_order(&self) -> Vec<(usize, &MessageOption)> {
        let mut v: Vec<_> = self.options.iter().enumerate().collect();
        v.sort_by_key(|(_, o)| o.display_position);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OptionViolation {
    WrongCount { options: usize, rationales: usize },
    EmptyOption(usize),
    NotDistinct,
    AppropriateOutOfRange(usize),
    DisplayNotPermutation,
    EmptyRationale(usize),
    KindMismatch { expected: ScenarioKind, found: ScenarioKind },
    TooFewEmoji { found: usize },
    StyleMismatch { index: usize, expected: OptionStyle, found: OptionStyle },
}

impl fmt::Display for OptionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptionViolation::WrongCount { options, rationales } => write!(
                f,
                "expected 3 options and 3 rationales, got {options} and {rationales}"
            ),
            OptionViolation::EmptyOption(i) => write!(f, "option {i} is empty"),
            OptionViolation::NotDistinct => f.write_str("options not distinct"),
            OptionViolation::AppropriateOutOfRange(i) => {
                write!(f, "appropriate index {i} out of range")
            }
            OptionViolation::DisplayNotPermutation => {
                f.write_str("display positions are not a permutation of 0..3")
            }
            OptionViolation::EmptyRationale(i) => write!(f, "rationale {i} is empty"),
            OptionViolation::KindMismatch { expected, found } => {
                write!(f, "option set is for {found}, turn is {expected}")
            }
            OptionViolation::TooFewEmoji { found } => {
                write!(f, "only {found} option(s) contain an emoji, need at least 2")
            }
            OptionViolation::StyleMismatch {
                index,
                expected,
                found,
            } => write!(
                f,
                "option {index} is {}, expected {}",
                found.tag(),
                expected.tag()
            ),
        }
    }
}

/// Checks every structural and per-kind rule of an option set.
pub fn validate_option_set(
    set: &MessageOptionSet,
    kind: ScenarioKind,
) -> Result<(), Vec<OptionViolation>> {
    let mut violations = Vec::new();

    if set.kind != kind {
        violations.push(OptionViolation::KindMismatch {
            expected: kind,
            found: set.kind,
        });
    }
    if set.options.len() != OPTION_COUNT || set.hidden_rationales.len() != OPTION_COUNT {
        violations.push(OptionViolation::WrongCount {
            options: set.options.len(),
            rationales: set.hidden_rationales.len(),
        });
        return Err(violations);
    }

    for (i, option) in set.options.iter().enumerate() {
        if option.text.trim().is_empty() {
            violations.push(OptionViolation::EmptyOption(i));
        }
    }
    let distinct: HashSet<String> = set
        .options
        .iter()
        .map(|o| o.text.trim().to_lowercase())
        .collect();
    if distinct.len() != OPTION_COUNT {
        violations.push(OptionViolation::NotDistinct);
    }
    if set.appropriate_index >= OPTION_COUNT {
        violations.push(OptionViolation::AppropriateOutOfRange(set.appropriate_index));
    }
    let positions: HashSet<u8> = set.options.iter().map(|o| o.display_position).collect();
    if positions != HashSet::from([0, 1, 2]) {
        violations.push(OptionViolation::DisplayNotPermutation);
    }
    for (i, r) in set.hidden_rationales.iter().enumerate() {
        if r.trim().is_empty() {
            violations.push(OptionViolation::EmptyRationale(i));
        }
    }

    if kind == ScenarioKind::EmojiVariable {
        let found = set.options.iter().filter(|o| contains_emoji(&o.text)).count();
        if found < 2 {
            violations.push(OptionViolation::TooFewEmoji { found });
        }
    }

    let (clear, misleading) = OptionStyle::pair_for(kind);
    for (i, option) in set.options.iter().enumerate() {
        let expected = if i == set.appropriate_index {
            clear
        } else {
            misleading
        };
        if option.style != expected {
            violations.push(OptionViolation::StyleMismatch {
                index: i,
                expected,
                found: option.style,
            });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// True if `text` contains a pictographic emoji codepoint. Keycap bases
/// (digits, `#`, `*`) carry the emoji property too but are plain ASCII, so
/// they are ignored.
pub fn contains_emoji(text: &str) -> bool {
    text.chars().any(|c| {
        !c.is_ascii() && unic_emoji_char::is_emoji(c) && !unic_emoji_char::is_emoji_modifier(c)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    NormalReply,
    Clarification,
    BluntTrigger,
    BluntFollowUp,
    ContinueReply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterMessage {
    pub text: String,
    pub role: MessageRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Positive,
    Constructive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestAlternative {
    pub text: String,
    pub rationale: String,
}

/// The feedback panel shown after the character responds to a chosen option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub heading: String,
    pub body: String,
    pub best_alternative: Option<BestAlternative>,
    pub continue_message: Option<String>,
}

impl Feedback {
    pub fn is_constructive(&self) -> bool {
        self.kind == FeedbackKind::Constructive
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.heading.trim().is_empty() {
            out.push("heading is empty".to_string());
        }
        if self.body.trim().is_empty() {
            out.push("body is empty".to_string());
        }
        match self.kind {
            FeedbackKind::Constructive => {
                match &self.best_alternative {
                    Some(alt) if !alt.text.trim().is_empty() && !alt.rationale.trim().is_empty() => {}
                    Some(_) => out.push("best alternative is incomplete".to_string()),
                    None => out.push("constructive feedback lacks a best alternative".to_string()),
                }
                match &self.continue_message {
                    Some(m) if !m.trim().is_empty() => {}
                    _ => out.push("constructive feedback lacks a continue message".to_string()),
                }
            }
            FeedbackKind::Positive => {
                if self.best_alternative.is_some() {
                    out.push("positive feedback carries a best alternative".to_string());
                }
                if self.continue_message.is_some() {
                    out.push("positive feedback carries a continue message".to_string());
                }
            }
        }
        out
    }
}
