use serde::{Deserialize, Serialize};

use crate::engine::ScenarioKind;

/// Canonical example statement for a scenario kind and its two readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioSeed {
    pub statement: &'static str,
    pub interpretation_a: &'static str,
    pub interpretation_b: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioBrief {
    pub background: String,
    pub instruction: String,
}

pub fn builtin_scenario_seed(kind: ScenarioKind) -> ScenarioSeed {
    match kind {
        ScenarioKind::IndirectSpeechAct => ScenarioSeed {
            statement: "Can you open the window?",
            interpretation_a: "literal question about the possibility",
            interpretation_b: "polite request to open it",
        },
        ScenarioKind::FigurativeExpression => ScenarioSeed {
            statement: "She has a chip on her shoulder.",
            interpretation_a: "literal reference to something on one's shoulder",
            interpretation_b: "one holds a grudge",
        },
        ScenarioKind::EmojiVariable => ScenarioSeed {
            statement: "That presentation was on 🔥 man...",
            interpretation_a: "the presentation was impressive",
            interpretation_b: "as sarcasm, it was poor",
        },
        ScenarioKind::MisperceivedBlunt => ScenarioSeed {
            statement: "I don't like your idea at all.",
            interpretation_a: "neutral expression of opinion",
            interpretation_b: "harshly expressed criticism",
        },
    }
}
