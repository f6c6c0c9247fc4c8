use std::path::Path;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::ContentError;

const DEFAULT_TERMS: &str = include_str!("../../content/banned_terms.toml");

/// Banned-term list as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BannedTerms {
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default)]
    pub whole_word_terms: Vec<String>,
}

impl Default for BannedTerms {
    fn default() -> Self {
        toml::from_str(DEFAULT_TERMS).expect("bundled banned-term list parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintViolation {
    pub term: String,
    /// Byte offset of the match.
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub violations: Vec<LintViolation>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Linter {
    patterns: Vec<(String, Regex)>,
}

impl Linter {
    pub fn new(terms: &BannedTerms) -> Result<Self, ContentError> {
        let build = |term: &str, whole_word: bool| {
            let escaped = regex::escape(term);
            let pattern = if whole_word {
                format!(r"\b{escaped}\b")
            } else {
                escaped
            };
            RegexBuilder::new(&pattern)
                .case_insensitive(true)
                .build()
                .map(|re| (term.to_string(), re))
                .map_err(|e| ContentError::Parse {
                    document: "banned terms".to_string(),
                    message: e.to_string(),
                })
        };
        let patterns = terms
            .terms
            .iter()
            .filter(|t| !t.trim().is_empty())
            .map(|t| build(t, false))
            .chain(
                terms
                    .whole_word_terms
                    .iter()
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| build(t, true)),
            )
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn from_file(path: &Path) -> Result<Self, ContentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ContentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let terms: BannedTerms = toml::from_str(&text).map_err(|e| ContentError::Parse {
            document: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(&terms)
    }

    pub fn lint(&self, text: &str) -> LintReport {
        let mut violations: Vec<LintViolation> = self
            .patterns
            .iter()
            .flat_map(|(term, re)| {
                re.find_iter(text).map(move |m| LintViolation {
                    term: term.clone(),
                    offset: m.start(),
                })
            })
            .collect();
        violations.sort_by(|a, b| a.offset.cmp(&b.offset).then(a.term.cmp(&b.term)));
        LintReport { violations }
    }
}

impl Default for Linter {
    fn default() -> Self {
        Self::new(&BannedTerms::default()).expect("default terms compile")
    }
}

static DEFAULT_LINTER: LazyLock<Linter> = LazyLock::new(Linter::default);

/// Lints `text` against the default banned-term list.
pub fn lint_prompt(text: &str) -> LintReport {
    DEFAULT_LINTER.lint(text)
}
