//! The station-local strategy ladder: cheapest remediation first, the center last.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    RestartFunction,
    RestartFramework,
    ReinstallPackage,
    RebootAgent,
    EscalateToCenter,
}

impl Strategy {
    pub const LADDER: [Strategy; 5] = [
        Strategy::RestartFunction,
        Strategy::RestartFramework,
        Strategy::ReinstallPackage,
        Strategy::RebootAgent,
        Strategy::EscalateToCenter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RestartFunction => "RESTART_FUNCTION",
            Strategy::RestartFramework => "RESTART_FRAMEWORK",
            Strategy::ReinstallPackage => "REINSTALL_PACKAGE",
            Strategy::RebootAgent => "REBOOT_AGENT",
            Strategy::EscalateToCenter => "ESCALATE_TO_CENTER",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::LADDER.into_iter().find(|l| l.as_str() == s)
    }

    /// Strategies a station can execute on its own.
    pub fn is_local(self) -> bool {
        self != Strategy::EscalateToCenter
    }
}

pub const DEFAULT_WINDOW: Duration = Duration::from_secs(600);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Rung {
    next: usize,
    last_fault: SimTime,
}

/// Per-subject rung counters. A subject climbs one rung per fault and falls
/// back to the bottom after a full window without faults.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyLadder {
    rungs: Vec<Strategy>,
    window: Duration,
    subjects: BTreeMap<String, Rung>,
}

impl Default for StrategyLadder {
    fn default() -> Self {
        StrategyLadder::new(Strategy::LADDER.to_vec(), DEFAULT_WINDOW)
    }
}

impl StrategyLadder {
    /// # Panics
    /// If `rungs` is empty.
    pub fn new(rungs: Vec<Strategy>, window: Duration) -> Self {
        assert!(!rungs.is_empty(), "strategy ladder needs at least one rung");
        StrategyLadder {
            rungs,
            window,
            subjects: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> Duration {
        self.window
    }

    /// Records a fault for `subject` and returns the rung to apply. Once
    /// the top rung is reached it is repeated for further faults inside
    /// the window.
    pub fn on_fault(&mut self, subject: &str, now: SimTime) -> Strategy {
        let window = self.window;
        let top = self.rungs.len() - 1;
        let rung = self.subjects.entry(subject.into()).or_insert(Rung {
            next: 0,
            last_fault: now,
        });
        if now.since(rung.last_fault) > window {
            rung.next = 0;
        }
        let idx = rung.next.min(top);
        rung.next = idx + 1;
        rung.last_fault = now;
        self.rungs[idx]
    }

    /// Index of the rung the next fault would get, after window expiry.
    pub fn peek(&self, subject: &str, now: SimTime) -> usize {
        match self.subjects.get(subject) {
            Some(r) if now.since(r.last_fault) <= self.window => r.next.min(self.rungs.len() - 1),
            _ => 0,
        }
    }

    pub fn reset(&mut self) {
        self.subjects.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn climbs_in_order_then_sticks_at_escalate() {
        let mut l = StrategyLadder::default();
        let seq: Vec<Strategy> = (0..6)
            .map(|i| l.on_fault("f", SimTime::from_secs(30 * i)))
            .collect();
        assert_eq!(&seq[..5], &Strategy::LADDER);
        assert_eq!(seq[5], Strategy::EscalateToCenter);
    }

    #[test]
    fn subjects_are_independent() {
        let mut l = StrategyLadder::default();
        assert_eq!(l.on_fault("f", SimTime::ZERO), Strategy::RestartFunction);
        assert_eq!(l.on_fault("g", SimTime::ZERO), Strategy::RestartFunction);
        assert_eq!(l.on_fault("f", SimTime::ZERO), Strategy::RestartFramework);
    }

    #[test]
    fn quiet_window_resets() {
        let mut l = StrategyLadder::default();
        l.on_fault("f", SimTime::ZERO);
        l.on_fault("f", SimTime::from_secs(10));
        assert_eq!(l.peek("f", SimTime::from_secs(20)), 2);
        assert_eq!(l.peek("f", SimTime::from_secs(611)), 0);
        assert_eq!(l.on_fault("f", SimTime::from_secs(611)), Strategy::RestartFunction);
        // Exactly at the window edge the subject is still hot.
        assert_eq!(l.on_fault("f", SimTime::from_secs(1211)), Strategy::RestartFramework);
    }

    proptest! {
        #[test]
        fn rung_index_monotone_within_window(gaps in proptest::collection::vec(0u64..900, 1..40)) {
            let mut l = StrategyLadder::default();
            let mut t = 0u64;
            let mut prev: Option<usize> = None;
            for g in gaps {
                t += g;
                let got = l.on_fault("x", SimTime::from_secs(t));
                let idx = Strategy::LADDER.iter().position(|s| *s == got).unwrap();
                match prev {
                    Some(p) if g <= 600 => prop_assert!(idx == (p + 1).min(4)),
                    _ => prop_assert_eq!(idx, 0),
                }
                prev = Some(idx);
            }
        }
    }
}
