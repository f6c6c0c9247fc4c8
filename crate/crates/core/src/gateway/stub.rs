//! Scripted provider for hermetic runs.
//!
//! A script is a list of entries. Each entry names a task and optionally a
//! scenario kind, a turn ordinal and a branch; the most specific matching
//! entry wins. `outputs` holds one text per regeneration attempt, the last
//! one repeating. Outputs may use `{name}` placeholders, filled from the
//! request's variables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Branch, CompletionRequest, GatewayError};
use crate::content::{substitute, TaskId};
use crate::engine::ScenarioKind;

const DEFAULT_SCRIPT: &str = include_str!("../../content/stub_script.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntry {
    pub task: TaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScenarioKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    pub outputs: Vec<String>,
}

impl StubEntry {
    pub fn new(task: TaskId, output: impl Into<String>) -> Self {
        Self {
            task,
            kind: None,
            turn: None,
            branch: None,
            outputs: vec![output.into()],
        }
    }

    pub fn kind(mut self, kind: ScenarioKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn turn(mut self, turn: u32) -> Self {
        self.turn = Some(turn);
        self
    }

    pub fn branch(mut self, branch: Branch) -> Self {
        self.branch = Some(branch);
        self
    }

    /// Replaces the outputs with one text per attempt.
    pub fn attempts(mut self, outputs: Vec<String>) -> Self {
        self.outputs = outputs;
        self
    }

    fn specificity(&self, req: &CompletionRequest) -> Option<u8> {
        if self.task != req.task_id || self.outputs.is_empty() {
            return None;
        }
        let mut score = 0;
        if let Some(kind) = self.kind {
            if Some(kind) != req.scenario_kind {
                return None;
            }
            score += 4;
        }
        if let Some(turn) = self.turn {
            if Some(turn) != req.turn {
                return None;
            }
            score += 2;
        }
        if let Some(branch) = self.branch {
            if Some(branch) != req.branch {
                return None;
            }
            score += 1;
        }
        Some(score)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubScript {
    #[serde(rename = "entry", default)]
    pub entries: Vec<StubEntry>,
}

impl StubScript {
    /// The bundled script, which covers every turn of a full session.
    pub fn builtin() -> Self {
        toml::from_str(DEFAULT_SCRIPT).expect("bundled stub script parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("stub script serializes")
    }

    /// Puts `entries` ahead of the existing ones, so they win ties.
    pub fn overlay(mut self, entries: impl IntoIterator<Item = StubEntry>) -> Self {
        let mut merged: Vec<StubEntry> = entries.into_iter().collect();
        merged.append(&mut self.entries);
        self.entries = merged;
        self
    }

    pub fn respond(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let mut best: Option<(u8, &StubEntry)> = None;
        for entry in &self.entries {
            if let Some(score) = entry.specificity(req) {
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, entry));
                }
            }
        }
        let (_, entry) = best.ok_or(GatewayError::Unscripted {
            task: req.task_id,
            kind: req.scenario_kind,
            turn: req.turn,
        })?;
        let idx = (req.attempt.max(1) as usize - 1).min(entry.outputs.len() - 1);
        // unknown placeholders are left verbatim so scripted text can contain braces
        let text = &entry.outputs[idx];
        Ok(substitute(text, &req.vars).unwrap_or_else(|_| fill_known(text, req)))
    }
}

fn fill_known(text: &str, req: &CompletionRequest) -> String {
    let mut out = text.to_string();
    for (k, v) in &req.vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
