//! Generates many option sets through the stub pipeline and measures where
//! the appropriate option lands on screen.

use std::sync::Arc;

use candor_core::content::ContentBundle;
use candor_core::engine::{ScenarioKind, UserProfile};
use candor_core::gateway::Gateway;
use candor_core::orchestrator::{contains_emoji, validate_option_set, Conversation, MessageOptionSet, Orchestrator};
use serde::{Deserialize, Serialize};

use crate::par::Exec;
use crate::report::InvariantReport;
use crate::script::DEFAULT_DRAFTS;
use crate::HarnessError;

/// Each display slot must hold the appropriate option in this share of sets.
pub const SLOT_SHARE: (f64, f64) = (0.27, 0.40);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    pub sets: Vec<MessageOptionSet>,
    pub failures: Vec<String>,
    /// Appropriate option count per display slot.
    pub slot_counts: [u64; 3],
    pub invalid_sets: u64,
    /// Emoji-kind sets with fewer than two emoji-bearing options.
    pub emoji_short: u64,
    pub report: InvariantReport,
}

pub fn option_sweep(n: usize, seed: u64) -> Result<SweepResult, HarnessError> {
    option_sweep_with(n, seed, Exec::default())
}

pub fn option_sweep_with(n: usize, seed: u64, exec: Exec) -> Result<SweepResult, HarnessError> {
    if n == 0 {
        return Err(HarnessError::InvalidArgument("sweep size must be at least 1".into()));
    }
    let gateway = Arc::new(Gateway::stubbed(candor_core::gateway::StubScript::builtin()));
    let orch = Orchestrator::new(Arc::new(ContentBundle::builtin()), gateway.clone());
    let profile = UserProfile::new("Mark", "he/him", "machine learning");
    let conv = Conversation {
        profile: &profile,
        character_name: "Julia",
        history: &[],
    };

    let results = exec.map((0..n).collect(), |i| {
        let kind = ScenarioKind::ALL[i % 4];
        let turn = 3 + (i % 8) as u32;
        let draft = DEFAULT_DRAFTS[i % DEFAULT_DRAFTS.len()];
        orch.generate_options(&conv, turn, seed.wrapping_add(i as u64), draft, kind)
            .map_err(|e| format!("set {i} ({kind}): {e}"))
    });

    let mut out = SweepResult {
        seed,
        sets: Vec::with_capacity(n),
        failures: Vec::new(),
        slot_counts: [0; 3],
        invalid_sets: 0,
        emoji_short: 0,
        report: InvariantReport::new(),
    };
    for result in results {
        match result {
            Err(e) => out.failures.push(e),
            Ok(set) => {
                if validate_option_set(&set, set.kind).is_err() {
                    out.invalid_sets += 1;
                }
                if set.kind == ScenarioKind::EmojiVariable
                    && set.options.iter().filter(|o| contains_emoji(&o.text)).count() < 2
                {
                    out.emoji_short += 1;
                }
                if let Some(slot) = set.appropriate().map(|o| o.display_position as usize).filter(|&s| s < 3) {
                    out.slot_counts[slot] += 1;
                }
                out.sets.push(set);
            }
        }
    }

    let (lo, hi) = (SLOT_SHARE.0 * n as f64, SLOT_SHARE.1 * n as f64);
    out.report.expect_none("generated", out.failures.clone(), format!("{n} set(s)"));
    out.report.check("valid", out.invalid_sets == 0, format!("{} invalid set(s)", out.invalid_sets));
    out.report.check(
        "emoji_present",
        out.emoji_short == 0,
        format!("{} emoji set(s) short of two emoji", out.emoji_short),
    );
    out.report.check(
        "slot_balance",
        out.slot_counts.iter().all(|&c| (lo..=hi).contains(&(c as f64))),
        format!("slots {:?}, band {lo:.0}..={hi:.0}", out.slot_counts),
    );
    out.report.check(
        "hermetic",
        gateway.network_calls() == 0,
        format!("{} network call(s)", gateway.network_calls()),
    );
    Ok(out)
}
