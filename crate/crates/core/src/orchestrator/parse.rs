//! Strict readers for the line-tagged formats the prompts ask for.
//!
//! Every non-blank line must be `TAG: value` with an upper-case tag from the
//! expected set, each tag at most once. Markdown fences are tolerated; any
//! other stray text is an error.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::artifacts::{
    BestAlternative, Feedback, FeedbackKind, MessageOption, MessageOptionSet, OptionStyle,
    OPTION_COUNT,
};
use crate::engine::ScenarioKind;

static TAGGED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Z][A-Z0-9_]*)\s*:\s*(.*)$").expect("valid regex"));

/// Splits model output into tag → value, rejecting unknown or repeated tags.
pub fn tagged_lines(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let caps = TAGGED
            .captures(line)
            .ok_or_else(|| format!("untagged line: {line:?}"))?;
        let tag = &caps[1];
        if !allowed.contains(&tag) {
            return Err(format!("unexpected tag {tag}"));
        }
        if out.insert(tag.to_string(), caps[2].trim().to_string()).is_some() {
            return Err(format!("tag {tag} repeated"));
        }
    }
    Ok(out)
}

fn required(fields: &BTreeMap<String, String>, tag: &str) -> Result<String, String> {
    match fields.get(tag) {
        Some(v) if !v.is_empty() => Ok(v.clone()),
        Some(_) => Err(format!("{tag} is empty")),
        None => Err(format!("{tag} missing")),
    }
}

pub fn background(text: &str) -> Result<String, String> {
    required(&tagged_lines(text, &["BACKGROUND"])?, "BACKGROUND")
}

pub fn message(text: &str) -> Result<String, String> {
    required(&tagged_lines(text, &["MESSAGE"])?, "MESSAGE")
}

const OPTION_TAGS: [&str; 10] = [
    "OPTION_1",
    "OPTION_2",
    "OPTION_3",
    "STYLE_1",
    "STYLE_2",
    "STYLE_3",
    "APPROPRIATE",
    "RATIONALE_1",
    "RATIONALE_2",
    "RATIONALE_3",
];

/// Options in model order with identity display positions; the caller
/// shuffles and validates.
pub fn option_set(text: &str, kind: ScenarioKind) -> Result<MessageOptionSet, String> {
    let fields = tagged_lines(text, &OPTION_TAGS)?;
    let mut options = Vec::with_capacity(OPTION_COUNT);
    let mut rationales = Vec::with_capacity(OPTION_COUNT);
    for i in 1..=OPTION_COUNT {
        let style_tag = required(&fields, &format!("STYLE_{i}"))?;
        let style = OptionStyle::from_tag(&style_tag.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown style {style_tag:?}"))?;
        options.push(MessageOption {
            text: required(&fields, &format!("OPTION_{i}"))?,
            display_position: (i - 1) as u8,
            style,
        });
        rationales.push(required(&fields, &format!("RATIONALE_{i}"))?);
    }
    let appropriate: usize = required(&fields, "APPROPRIATE")?
        .parse()
        .map_err(|_| "APPROPRIATE is not a number".to_string())?;
    if !(1..=OPTION_COUNT).contains(&appropriate) {
        return Err(format!("APPROPRIATE {appropriate} out of range"));
    }
    Ok(MessageOptionSet {
        kind,
        options,
        appropriate_index: appropriate - 1,
        hidden_rationales: rationales,
    })
}

/// Feedback for the expected branch. The best alternative's text is always
/// the set's appropriate option, never model output.
pub fn feedback(
    text: &str,
    expected: FeedbackKind,
    set: &MessageOptionSet,
) -> Result<Feedback, String> {
    let fields = tagged_lines(
        text,
        &["VERDICT", "HEADING", "BODY", "ALTERNATIVE_RATIONALE", "CONTINUE"],
    )?;
    let kind = match required(&fields, "VERDICT")?.to_ascii_lowercase().as_str() {
        "positive" => FeedbackKind::Positive,
        "constructive" => FeedbackKind::Constructive,
        other => return Err(format!("unknown verdict {other:?}")),
    };
    if kind != expected {
        return Err(format!("verdict {kind:?}, expected {expected:?}"));
    }
    let heading = required(&fields, "HEADING")?;
    let body = required(&fields, "BODY")?;
    let feedback = match kind {
        FeedbackKind::Positive => {
            if fields.contains_key("ALTERNATIVE_RATIONALE") || fields.contains_key("CONTINUE") {
                return Err("positive feedback carries constructive fields".into());
            }
            Feedback {
                kind,
                heading,
                body,
                best_alternative: None,
                continue_message: None,
            }
        }
        FeedbackKind::Constructive => {
            let appropriate = set
                .appropriate()
                .ok_or("option set has no appropriate option")?;
            Feedback {
                kind,
                heading,
                body,
                best_alternative: Some(BestAlternative {
                    text: appropriate.text.clone(),
                    rationale: required(&fields, "ALTERNATIVE_RATIONALE")?,
                }),
                continue_message: Some(required(&fields, "CONTINUE")?),
            }
        }
    };
    match feedback.violations().as_slice() {
        [] => Ok(feedback),
        v => Err(v.join("; ")),
    }
}

static OR_CONTRAST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bor\b").expect("valid regex"));

/// A clarification must ask, and must offer two readings.
pub fn check_clarification(text: &str) -> Result<(), String> {
    if !text.contains('?') {
        return Err("clarification asks no question".into());
    }
    if !OR_CONTRAST.is_match(text) {
        return Err("clarification does not contrast two readings".into());
    }
    Ok(())
}

/// A blunt trigger states something; it may end with a question but cannot
/// be only questions.
pub fn check_blunt_trigger(text: &str) -> Result<(), String> {
    let statements = text
        .split_inclusive(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .filter(|s| !s.ends_with('?'))
        .count();
    if statements == 0 {
        return Err("blunt trigger contains no statement".into());
    }
    Ok(())
}
