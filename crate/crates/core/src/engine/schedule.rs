use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Assignment, EngineError, ScenarioKind};

/// Warm-up turns before any scenario is staged.
pub const DEFAULT_FREE_TURNS: u8 = 2;
/// Rounds each scenario kind is played per session.
pub const ROUNDS_PER_KIND: u8 = 2;
/// Scenario turns per session.
pub const SCENARIO_TURNS: usize = ROUNDS_PER_KIND as usize * ScenarioKind::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub free_turns: u8,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            free_turns: DEFAULT_FREE_TURNS,
        }
    }
}

/// Which turn types are still owed in a session, and in what order the
/// scenario kinds come out.
///
/// Scenario rounds are drawn in passes: each pass is a seed-derived
/// permutation of the four kinds, and a pass never starts with the kind the
/// previous pass ended on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub free_turns_remaining: u8,
    pub remaining_rounds: BTreeMap<ScenarioKind, u8>,
    pub order_seed: u64,
    pub emitted: Vec<ScenarioKind>,
}

impl ScheduleState {
    pub fn new(order_seed: u64) -> Self {
        Self::with_config(order_seed, ScheduleConfig::default())
    }

    pub fn with_config(order_seed: u64, config: ScheduleConfig) -> Self {
        Self {
            free_turns_remaining: config.free_turns,
            remaining_rounds: ScenarioKind::ALL
                .into_iter()
                .map(|k| (k, ROUNDS_PER_KIND))
                .collect(),
            order_seed,
            emitted: Vec::new(),
        }
    }

    pub fn rounds_left(&self) -> usize {
        self.remaining_rounds.values().map(|&n| n as usize).sum()
    }

    pub fn is_exhausted(&self) -> bool {
        self.free_turns_remaining == 0 && self.rounds_left() == 0
    }

    /// Draws the next turn's assignment without mutating `self`.
    pub fn next_assignment(&self) -> Result<(Assignment, ScheduleState), EngineError> {
        let mut next = self.clone();
        if next.free_turns_remaining > 0 {
            next.free_turns_remaining -= 1;
            return Ok((Assignment::Free, next));
        }
        if next.rounds_left() == 0 {
            return Err(EngineError::ScheduleExhausted);
        }

        let position = next.emitted.len();
        let pass = pass_order(self.order_seed, position / ScenarioKind::ALL.len());
        let preferred = pass[position % ScenarioKind::ALL.len()];
        let kind = if next.remaining_rounds.get(&preferred).copied().unwrap_or(0) > 0 {
            preferred
        } else {
            // only reachable from a hand-edited schedule; fall back to any
            // kind that still has rounds, in pass order
            pass.into_iter()
                .find(|k| next.remaining_rounds.get(k).copied().unwrap_or(0) > 0)
                .ok_or(EngineError::ScheduleExhausted)?
        };

        if let Some(n) = next.remaining_rounds.get_mut(&kind) {
            *n -= 1;
        }
        next.emitted.push(kind);
        Ok((Assignment::Scenario(kind), next))
    }

    /// Human-readable descriptions of every broken invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let total = self.rounds_left() + self.emitted.len();
        if total != SCENARIO_TURNS {
            out.push(format!(
                "remaining rounds plus emitted is {total}, expected {SCENARIO_TURNS}"
            ));
        }
        if self.remaining_rounds.len() != ScenarioKind::ALL.len() {
            out.push("remaining_rounds does not list every kind".to_string());
        }
        for (kind, &n) in &self.remaining_rounds {
            if n > ROUNDS_PER_KIND {
                out.push(format!("{kind} has {n} rounds left"));
            }
            let emitted = self.emitted.iter().filter(|k| *k == kind).count();
            if emitted + n as usize != ROUNDS_PER_KIND as usize {
                out.push(format!("{kind}: emitted {emitted} with {n} left"));
            }
        }
        out
    }
}

/// Seed-derived order of the kinds for one pass over the schedule.
pub fn pass_order(seed: u64, pass: usize) -> [ScenarioKind; 4] {
    let mut order = shuffled(seed, pass);
    if pass > 0 {
        let previous_last = pass_order(seed, pass - 1)[ScenarioKind::ALL.len() - 1];
        if order[0] == previous_last {
            order.swap(0, 1);
        }
    }
    order
}

fn shuffled(seed: u64, pass: usize) -> [ScenarioKind; 4] {
    let mut order = ScenarioKind::ALL;
    let stream = seed ^ (pass as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn drain_scenarios(mut schedule: ScheduleState) -> Vec<ScenarioKind> {
        let mut kinds = Vec::new();
        while let Ok((assignment, next)) = schedule.next_assignment() {
            if let Assignment::Scenario(k) = assignment {
                kinds.push(k);
            }
            schedule = next;
        }
        kinds
    }

    #[test]
    fn fresh_schedule_starts_with_free_turn() {
        let schedule = ScheduleState::new(7);
        assert_eq!(schedule.rounds_left(), 8);
        assert_eq!(schedule.free_turns_remaining, 2);
        let (assignment, next) = schedule.next_assignment().unwrap();
        assert_eq!(assignment, Assignment::Free);
        assert_eq!(next.free_turns_remaining, 1);
    }

    #[test]
    fn exhausted_schedule_errors() {
        let mut schedule = ScheduleState::new(1);
        for _ in 0..10 {
            schedule = schedule.next_assignment().unwrap().1;
        }
        assert!(schedule.is_exhausted());
        assert_eq!(
            schedule.next_assignment(),
            Err(EngineError::ScheduleExhausted)
        );
    }

    #[test]
    fn hand_edited_schedule_still_draws_a_kind_with_rounds() {
        let mut schedule = ScheduleState::new(3);
        schedule.free_turns_remaining = 0;
        let preferred = pass_order(3, 0)[0];
        schedule.remaining_rounds.insert(preferred, 0);
        let (assignment, _) = schedule.next_assignment().unwrap();
        assert_ne!(assignment, Assignment::Scenario(preferred));
    }

    proptest! {
        // Oracle: count every emitted kind over all draws.
        #[test]
        fn every_seed_yields_each_kind_twice(seed in any::<u64>()) {
            let mut schedule = ScheduleState::new(seed);
            let (first, s) = schedule.next_assignment().unwrap();
            let (second, s) = s.next_assignment().unwrap();
            prop_assert_eq!(first, Assignment::Free);
            prop_assert_eq!(second, Assignment::Free);
            schedule = s;
            let kinds = drain_scenarios(schedule.clone());
            prop_assert_eq!(kinds.len(), 8);
            let mut histogram = BTreeMap::new();
            for k in &kinds {
                *histogram.entry(*k).or_insert(0) += 1;
            }
            prop_assert_eq!(histogram.len(), 4);
            prop_assert!(histogram.values().all(|&n| n == 2));
            prop_assert!(kinds.windows(2).all(|w| w[0] != w[1]));
        }

        #[test]
        fn invariants_hold_along_the_way(seed in any::<u64>()) {
            let mut schedule = ScheduleState::new(seed);
            prop_assert!(schedule.violations().is_empty());
            while let Ok((_, next)) = schedule.next_assignment() {
                prop_assert!(next.violations().is_empty());
                prop_assert!(next.free_turns_remaining <= 2);
                schedule = next;
            }
        }

        #[test]
        fn drawing_is_deterministic(seed in any::<u64>()) {
            let a = drain_scenarios(ScheduleState::new(seed));
            let b = drain_scenarios(ScheduleState::new(seed));
            prop_assert_eq!(a, b);
        }
    }
}
