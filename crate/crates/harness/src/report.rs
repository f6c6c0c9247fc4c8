use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Named pass/fail checks. Overall pass requires every check to pass and at
/// least one check to exist.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub checks: Vec<Check>,
}

impl InvariantReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    /// Records a check that passes when `problems` is empty.
    pub fn expect_none(&mut self, name: &str, problems: Vec<String>, ok: impl Into<String>) {
        if problems.is_empty() {
            self.check(name, true, ok);
        } else {
            let shown: Vec<_> = problems.iter().take(5).cloned().collect();
            let more = problems.len().saturating_sub(shown.len());
            let mut detail = shown.join("; ");
            if more > 0 {
                detail.push_str(&format!("; and {more} more"));
            }
            self.check(name, false, detail);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            overall: bool,
            checks: &'a [Check],
        }
        let mut out = serde_json::to_string_pretty(&Doc {
            overall: self.passed(),
            checks: &self.checks,
        })
        .expect("report serializes");
        out.push('\n');
        out
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark}  {:<24} {}", c.name, c.detail)?;
        }
        let overall = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "overall: {overall}")
    }
}
