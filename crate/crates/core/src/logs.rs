//! Rule-driven analysis of the agent's local log.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{FaultEvent, FaultLayer, Severity};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Debug => "DEBUG",
            LogLevel::Info => "INFO",
            LogLevel::Warn => "WARN",
            LogLevel::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<LogLevel> {
        [LogLevel::Debug, LogLevel::Info, LogLevel::Warn, LogLevel::Error]
            .into_iter()
            .find(|l| l.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    pub at: SimTime,
    pub level: LogLevel,
    pub subject: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRule {
    pub name: String,
    /// Case-insensitive substring of the message.
    pub pattern: String,
    pub min_level: LogLevel,
    pub threshold: usize,
    pub window: Duration,
    pub layer: FaultLayer,
    pub severity: Severity,
}

impl LogRule {
    fn matches(&self, line: &LogLine) -> bool {
        line.level >= self.min_level && line.message.to_lowercase().contains(&self.pattern.to_lowercase())
    }
}

pub fn default_rules() -> Vec<LogRule> {
    Vec::from([
        LogRule {
            name: "retry-storm".into(),
            pattern: "retry".into(),
            min_level: LogLevel::Debug,
            threshold: 10,
            window: Duration::from_secs(60),
            layer: FaultLayer::Function,
            severity: Severity::Warning,
        },
        LogRule {
            name: "error-burst".into(),
            pattern: "".into(),
            min_level: LogLevel::Error,
            threshold: 5,
            window: Duration::from_secs(60),
            layer: FaultLayer::Function,
            severity: Severity::Error,
        },
        LogRule {
            name: "link-timeouts".into(),
            pattern: "timeout".into(),
            min_level: LogLevel::Warn,
            threshold: 3,
            window: Duration::from_secs(120),
            layer: FaultLayer::Network,
            severity: Severity::Warning,
        },
    ])
}

/// Scans lines stamped in `[max(from, to - rule.window), to]` and emits one
/// event per (rule, subject) that reaches the rule's threshold. Events come
/// out in rule order, then subject order, stamped with the last matching line.
pub fn analyze(station: &str, lines: &[LogLine], from: SimTime, to: SimTime, rules: &[LogRule]) -> Vec<FaultEvent> {
    let mut out = Vec::new();
    for rule in rules {
        let start = from.max(to.saturating_sub(rule.window));
        let mut hits: BTreeMap<&str, (usize, SimTime)> = BTreeMap::new();
        for line in lines {
            if line.at < start || line.at > to || !rule.matches(line) {
                continue;
            }
            let e = hits.entry(line.subject.as_str()).or_insert((0, line.at));
            e.0 += 1;
            e.1 = e.1.max(line.at);
        }
        for (subject, (count, last)) in hits {
            if count >= rule.threshold.max(1) {
                out.push(FaultEvent::new(
                    station,
                    rule.layer,
                    rule.severity,
                    subject,
                    last,
                    format!("{}: {} matching lines", rule.name, count),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(at_s: u64, level: LogLevel, subject: &str, msg: &str) -> LogLine {
        LogLine {
            at: SimTime::from_secs(at_s),
            level,
            subject: subject.into(),
            message: msg.into(),
        }
    }

    #[test]
    fn empty_log() {
        assert!(analyze("s", &[], SimTime::ZERO, SimTime::from_secs(60), &default_rules()).is_empty());
    }

    #[test]
    fn retry_storm() {
        let lines: Vec<_> = (0..10).map(|i| line(i, LogLevel::Info, "f", "Retry upstream")).collect();
        let ev = analyze("s", &lines, SimTime::ZERO, SimTime::from_secs(30), &default_rules());
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].layer, ev[0].severity, ev[0].subject.as_str()), (FaultLayer::Function, Severity::Warning, "f"));
        assert_eq!(ev[0].occurred_at, SimTime::from_secs(9));
        // Split across two functions: neither reaches ten.
        let split: Vec<_> = (0..10)
            .map(|i| line(i, LogLevel::Info, if i % 2 == 0 { "f" } else { "g" }, "retry"))
            .collect();
        assert!(analyze("s", &split, SimTime::ZERO, SimTime::from_secs(30), &default_rules()).is_empty());
    }

    #[test]
    fn isolated_error_line() {
        let lines = [line(5, LogLevel::Error, "f", "connection refused")];
        assert!(analyze("s", &lines, SimTime::ZERO, SimTime::from_secs(60), &default_rules()).is_empty());
    }

    proptest! {
        #[test]
        fn retry_count_oracle(stamps in proptest::collection::vec((0u64..300, any::<bool>()), 0..40), to in 0u64..300) {
            let lines: Vec<_> = stamps
                .iter()
                .map(|&(t, retry)| line(t, LogLevel::Info, "f", if retry { "will RETRY" } else { "ok" }))
                .collect();
            let rule = &default_rules()[0];
            let lo = to.saturating_sub(60);
            let n = stamps.iter().filter(|&&(t, r)| r && t >= lo && t <= to).count();
            let ev = analyze("s", &lines, SimTime::ZERO, SimTime::from_secs(to), core::slice::from_ref(rule));
            prop_assert_eq!(ev.len(), usize::from(n >= 10));
        }
    }
}
