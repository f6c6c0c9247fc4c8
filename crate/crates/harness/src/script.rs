use std::collections::BTreeMap;

use candor_core::engine::{ScenarioKind, UserProfile};
use candor_core::gateway::StubScript;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// How the scripted user picks among the three options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "snake_case")]
pub enum PickPolicy {
    AlwaysAppropriate,
    /// The option right after the appropriate one.
    AlwaysWrong,
    /// One option index per scenario turn, in order.
    Indexed(Vec<usize>),
    RandomSeeded(u64),
}

impl PickPolicy {
    /// Parses `appropriate`, `wrong`, `random:<seed>` or `indexed:0,2,1`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::InvalidScript(format!("unknown pick policy {text:?}"));
        match text.split_once(':') {
            None => match text {
                "appropriate" => Ok(PickPolicy::AlwaysAppropriate),
                "wrong" => Ok(PickPolicy::AlwaysWrong),
                _ => Err(bad()),
            },
            Some(("random", seed)) => seed.parse().map(PickPolicy::RandomSeeded).map_err(|_| bad()),
            Some(("indexed", list)) => list
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(PickPolicy::Indexed)
                .map_err(|_| bad()),
            Some(_) => Err(bad()),
        }
    }
}

/// Resolves picks turn by turn for one session.
#[derive(Debug, Clone)]
pub struct Picker {
    policy: PickPolicy,
    rng: ChaCha8Rng,
    used: usize,
}

impl Picker {
    pub fn new(policy: &PickPolicy) -> Self {
        let seed = match policy {
            PickPolicy::RandomSeeded(s) => *s,
            _ => 0,
        };
        Self {
            policy: policy.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: 0,
        }
    }

    /// The option index to select, given the set's appropriate index.
    pub fn pick(&mut self, appropriate: usize, turn: u32) -> Result<usize, HarnessError> {
        let n = self.used;
        self.used += 1;
        Ok(match &self.policy {
            PickPolicy::AlwaysAppropriate => appropriate,
            PickPolicy::AlwaysWrong => (appropriate + 1) % 3,
            PickPolicy::Indexed(list) => *list.get(n).ok_or(HarnessError::ScriptExhausted {
                turn,
                missing: "option pick",
            })?,
            PickPolicy::RandomSeeded(_) => self.rng.random_range(0..3),
        })
    }
}

/// A complete scripted session.
#[derive(Debug, Clone)]
pub struct SessionScript {
    pub session_id: String,
    pub profile: UserProfile,
    pub seed: u64,
    /// One draft per turn, in order.
    pub drafts: Vec<String>,
    /// Replaces the per-turn draft on scenario turns of the given kind.
    pub kind_drafts: BTreeMap<ScenarioKind, String>,
    pub policy: PickPolicy,
    pub stub: StubScript,
    /// Send a draft at every continue gate and expect it to be refused.
    pub probe_gates: bool,
}

pub const DEFAULT_DRAFTS: [&str; 10] = [
    "hey! have you been following the news about new language models?",
    "i keep seeing them everywhere. what do you think about them?",
    "how can i speed up a vision model running on an embedded device?",
    "learning all of this has been confusing but i'll get there.",
    "i went to coastal maine last summer. is massachusetts similar?",
    "my cat figured out how to open the kitchen drawers this week.",
    "what do you usually work on in your free time?",
    "i tried a new hiking trail yesterday and it was great.",
    "do you have any tips for reading research papers faster?",
    "thanks for chatting, this has been fun.",
];

impl SessionScript {
    pub fn standard(seed: u64, policy: PickPolicy) -> Self {
        Self {
            session_id: format!("harness-{seed}"),
            profile: UserProfile::new("Mark", "he/him", "machine learning"),
            seed,
            drafts: DEFAULT_DRAFTS.iter().map(|s| s.to_string()).collect(),
            kind_drafts: BTreeMap::new(),
            policy,
            stub: StubScript::builtin(),
            probe_gates: true,
        }
    }

    pub fn draft_for(&self, turn: u32, kind: Option<ScenarioKind>) -> Result<String, HarnessError> {
        if let Some(text) = kind.and_then(|k| self.kind_drafts.get(&k)) {
            return Ok(text.clone());
        }
        self.drafts
            .get(turn as usize - 1)
            .cloned()
            .ok_or(HarnessError::ScriptExhausted {
                turn,
                missing: "draft",
            })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if let PickPolicy::Indexed(list) = &self.policy {
            if let Some(i) = list.iter().find(|&&i| i > 2) {
                return Err(HarnessError::InvalidScript(format!("option index {i} out of range")));
            }
        }
        if self.drafts.iter().any(|d| d.trim().is_empty()) {
            return Err(HarnessError::InvalidScript("empty draft".into()));
        }
        Ok(())
    }
}
