//! The center's decision instance: a first-match rule table over fault reports.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ladder::Strategy;
use crate::model::{FaultEvent, FaultLayer, Severity};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "arg", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    AckLogged,
    OrderStrategy(Strategy),
    QuarantineFunction(String),
    ReprovisionStation,
    NotifyOperator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentralDecision {
    pub decisions: Vec<Decision>,
    pub rationale: String,
}

impl CentralDecision {
    pub fn contains(&self, d: &Decision) -> bool {
        self.decisions.contains(d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "when", rename_all = "snake_case")]
pub enum Condition {
    Always,
    LadderExhausted,
    /// At least `count` events of the same severity and subject, this one
    /// included, within the trailing window.
    Repeated { count: u32, window_secs: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    AckLogged,
    OrderStrategy(Strategy),
    QuarantineSubject,
    ReprovisionStation,
    NotifyOperator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub name: String,
    pub severities: Vec<Severity>,
    /// `None` matches every layer.
    #[serde(default)]
    pub layers: Option<Vec<FaultLayer>>,
    pub condition: Condition,
    pub outcomes: Vec<Outcome>,
}

impl DecisionRule {
    fn matches(&self, event: &FaultEvent, history: &[FaultEvent]) -> bool {
        if !self.severities.contains(&event.severity) {
            return false;
        }
        if let Some(layers) = &self.layers {
            if !layers.contains(&event.layer) {
                return false;
            }
        }
        match &self.condition {
            Condition::Always => true,
            Condition::LadderExhausted => event.ladder_exhausted,
            Condition::Repeated { count, window_secs } => {
                let since = event
                    .occurred_at
                    .saturating_sub(Duration::from_secs(*window_secs));
                let earlier = history
                    .iter()
                    .filter(|h| {
                        h.station == event.station
                            && h.subject == event.subject
                            && h.severity == event.severity
                            && h.occurred_at >= since
                            && h.occurred_at <= event.occurred_at
                    })
                    .count();
                earlier + 1 >= *count as usize
            }
        }
    }
}

/// Ordered rules; the first match decides. Unmatched events notify the operator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub rules: Vec<DecisionRule>,
}

const NON_FUNCTION: [FaultLayer; 4] = [
    FaultLayer::Os,
    FaultLayer::Framework,
    FaultLayer::Network,
    FaultLayer::DataCollection,
];

impl Default for DecisionTable {
    fn default() -> Self {
        let rule = |name: &str,
                    severities: &[Severity],
                    layers: Option<&[FaultLayer]>,
                    condition: Condition,
                    outcomes: Vec<Outcome>| DecisionRule {
            name: name.into(),
            severities: severities.to_vec(),
            layers: layers.map(<[FaultLayer]>::to_vec),
            condition,
            outcomes,
        };
        let repeated = Condition::Repeated {
            count: 3,
            window_secs: 600,
        };
        DecisionTable {
            rules: vec![
                rule(
                    "informational",
                    &[Severity::Info, Severity::Warning],
                    None,
                    Condition::Always,
                    vec![Outcome::AckLogged],
                ),
                rule(
                    "function-ladder-exhausted",
                    &[Severity::Error],
                    Some(&[FaultLayer::Function]),
                    Condition::LadderExhausted,
                    vec![Outcome::QuarantineSubject],
                ),
                rule(
                    "function-repeated-error",
                    &[Severity::Error],
                    Some(&[FaultLayer::Function]),
                    repeated.clone(),
                    vec![Outcome::QuarantineSubject],
                ),
                rule(
                    "platform-ladder-exhausted",
                    &[Severity::Error],
                    Some(&NON_FUNCTION),
                    Condition::LadderExhausted,
                    vec![Outcome::NotifyOperator],
                ),
                rule(
                    "platform-repeated-error",
                    &[Severity::Error],
                    Some(&NON_FUNCTION),
                    repeated,
                    vec![Outcome::NotifyOperator],
                ),
                rule(
                    "error-handled-locally",
                    &[Severity::Error],
                    None,
                    Condition::Always,
                    vec![Outcome::AckLogged],
                ),
                rule(
                    "critical-framework",
                    &[Severity::Critical],
                    Some(&[FaultLayer::Function, FaultLayer::Framework]),
                    Condition::Always,
                    vec![Outcome::OrderStrategy(Strategy::RestartFramework)],
                ),
                rule(
                    "critical-platform",
                    &[Severity::Critical],
                    Some(&[FaultLayer::Os, FaultLayer::Network]),
                    Condition::Always,
                    vec![Outcome::ReprovisionStation, Outcome::NotifyOperator],
                ),
                rule(
                    "critical-data-collection",
                    &[Severity::Critical],
                    Some(&[FaultLayer::DataCollection]),
                    Condition::Always,
                    vec![Outcome::NotifyOperator],
                ),
            ],
        }
    }
}

impl DecisionTable {
    /// Decides on `event` given earlier events from the same station.
    /// A pure function of its arguments.
    pub fn decide(&self, event: &FaultEvent, history: &[FaultEvent]) -> CentralDecision {
        let Some(rule) = self.rules.iter().find(|r| r.matches(event, history)) else {
            return CentralDecision {
                decisions: vec![Decision::NotifyOperator],
                rationale: "no rule matched".into(),
            };
        };
        let decisions = rule
            .outcomes
            .iter()
            .map(|o| match o {
                Outcome::AckLogged => Decision::AckLogged,
                Outcome::OrderStrategy(s) => Decision::OrderStrategy(*s),
                Outcome::QuarantineSubject => Decision::QuarantineFunction(event.subject.clone()),
                Outcome::ReprovisionStation => Decision::ReprovisionStation,
                Outcome::NotifyOperator => Decision::NotifyOperator,
            })
            .collect();
        CentralDecision {
            decisions,
            rationale: alloc::format!("rule `{}`", rule.name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    fn ev(layer: FaultLayer, severity: Severity, subject: &str, t: u64) -> FaultEvent {
        FaultEvent::new("irs-1", layer, severity, subject, SimTime::from_secs(t), "")
    }

    const LAYERS: [FaultLayer; 5] = [
        FaultLayer::Os,
        FaultLayer::Framework,
        FaultLayer::Function,
        FaultLayer::Network,
        FaultLayer::DataCollection,
    ];

    #[test]
    fn info_and_warning_are_acked_on_every_layer() {
        let t = DecisionTable::default();
        for layer in LAYERS {
            for sev in [Severity::Info, Severity::Warning] {
                assert_eq!(t.decide(&ev(layer, sev, "x", 0), &[]).decisions, [Decision::AckLogged]);
            }
        }
    }

    #[test]
    fn lone_error_is_left_to_the_station() {
        let t = DecisionTable::default();
        assert_eq!(
            t.decide(&ev(FaultLayer::Function, Severity::Error, "f", 0), &[]).decisions,
            [Decision::AckLogged]
        );
    }

    #[test]
    fn third_error_in_window_quarantines() {
        let t = DecisionTable::default();
        let h = [
            ev(FaultLayer::Function, Severity::Error, "f", 0),
            ev(FaultLayer::Function, Severity::Error, "f", 200),
        ];
        let mut third = ev(FaultLayer::Function, Severity::Error, "f", 500);
        assert_eq!(t.decide(&third, &h).decisions, [Decision::QuarantineFunction("f".into())]);
        third.ladder_exhausted = true;
        assert_eq!(t.decide(&third, &h).decisions, [Decision::QuarantineFunction("f".into())]);
        // First one has slid out of the window.
        let late = ev(FaultLayer::Function, Severity::Error, "f", 601);
        assert_eq!(t.decide(&late, &h).decisions, [Decision::AckLogged]);
        // Other subjects do not count.
        let other = ev(FaultLayer::Function, Severity::Error, "g", 500);
        assert_eq!(t.decide(&other, &h).decisions, [Decision::AckLogged]);
    }

    #[test]
    fn exhausted_ladder_quarantines_even_first_error() {
        let t = DecisionTable::default();
        let mut e = ev(FaultLayer::Function, Severity::Error, "f", 0);
        e.ladder_exhausted = true;
        assert_eq!(t.decide(&e, &[]).decisions, [Decision::QuarantineFunction("f".into())]);
    }

    #[test]
    fn critical_rows() {
        let t = DecisionTable::default();
        for layer in [FaultLayer::Function, FaultLayer::Framework] {
            assert_eq!(
                t.decide(&ev(layer, Severity::Critical, "x", 0), &[]).decisions,
                [Decision::OrderStrategy(Strategy::RestartFramework)]
            );
        }
        for layer in [FaultLayer::Os, FaultLayer::Network] {
            assert_eq!(
                t.decide(&ev(layer, Severity::Critical, "x", 0), &[]).decisions,
                [Decision::ReprovisionStation, Decision::NotifyOperator]
            );
        }
        assert_eq!(
            t.decide(&ev(FaultLayer::DataCollection, Severity::Critical, "x", 0), &[]).decisions,
            [Decision::NotifyOperator]
        );
    }

    #[test]
    fn table_is_total() {
        let t = DecisionTable::default();
        for layer in LAYERS {
            for sev in [Severity::Info, Severity::Warning, Severity::Error, Severity::Critical] {
                let d = t.decide(&ev(layer, sev, "x", 0), &[]);
                assert!(d.rationale.starts_with("rule"), "{layer:?} {sev:?} fell through");
            }
        }
    }
}
