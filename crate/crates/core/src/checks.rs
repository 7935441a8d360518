//! Local system verification run by the agent.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{FaultEvent, FaultLayer, Severity};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckName {
    DiskSpace,
    ClockSanity,
    ConfigDigest,
    FrameworkAlive,
    DataCollectionFresh,
    LinkUp,
}

impl CheckName {
    pub const ALL: [CheckName; 6] = [
        CheckName::DiskSpace,
        CheckName::ClockSanity,
        CheckName::ConfigDigest,
        CheckName::FrameworkAlive,
        CheckName::DataCollectionFresh,
        CheckName::LinkUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::DiskSpace => "DISK_SPACE",
            CheckName::ClockSanity => "CLOCK_SANITY",
            CheckName::ConfigDigest => "CONFIG_DIGEST",
            CheckName::FrameworkAlive => "FRAMEWORK_ALIVE",
            CheckName::DataCollectionFresh => "DATA_COLLECTION_FRESH",
            CheckName::LinkUp => "LINK_UP",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            CheckName::DiskSpace | CheckName::ConfigDigest | CheckName::LinkUp => Severity::Error,
            CheckName::ClockSanity | CheckName::DataCollectionFresh => Severity::Warning,
            CheckName::FrameworkAlive => Severity::Critical,
        }
    }

    pub fn layer(self) -> FaultLayer {
        match self {
            CheckName::DiskSpace | CheckName::ClockSanity | CheckName::ConfigDigest => FaultLayer::Os,
            CheckName::FrameworkAlive => FaultLayer::Framework,
            CheckName::DataCollectionFresh => FaultLayer::DataCollection,
            CheckName::LinkUp => FaultLayer::Network,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckStatus {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalCheckResult {
    pub check: CheckName,
    pub status: CheckStatus,
    pub detail: String,
}

impl LocalCheckResult {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    /// The fault a failed check turns into.
    pub fn to_fault(&self, station: &str, now: SimTime) -> Option<FaultEvent> {
        if self.passed() {
            return None;
        }
        Some(FaultEvent::new(
            station,
            self.check.layer(),
            self.check.severity(),
            self.check.as_str(),
            now,
            self.detail.clone(),
        ))
    }
}

/// Snapshot of the simulated station resources the checks look at.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationProbe {
    pub disk_used: u64,
    pub disk_quota: u64,
    pub clock_offset_ms: i64,
    pub max_clock_offset_ms: i64,
    /// Applications whose on-disk configuration no longer hashes to the
    /// digest recorded when it was applied.
    pub config_mismatches: Vec<String>,
    pub framework_alive: bool,
    pub last_data_at: SimTime,
    pub data_interval: Duration,
    pub link_up: bool,
}

pub const DEFAULT_DATA_INTERVAL: Duration = Duration::from_secs(5);
pub const DEFAULT_MAX_CLOCK_OFFSET_MS: i64 = 1000;
/// Data collection counts as stale after this many missed intervals.
pub const STALE_INTERVALS: u32 = 2;

impl Default for StationProbe {
    fn default() -> Self {
        StationProbe {
            disk_used: 0,
            disk_quota: u64::MAX,
            clock_offset_ms: 0,
            max_clock_offset_ms: DEFAULT_MAX_CLOCK_OFFSET_MS,
            config_mismatches: Vec::new(),
            framework_alive: true,
            last_data_at: SimTime::ZERO,
            data_interval: DEFAULT_DATA_INTERVAL,
            link_up: true,
        }
    }
}

fn result(check: CheckName, ok: bool, detail: String) -> LocalCheckResult {
    LocalCheckResult {
        check,
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        detail,
    }
}

/// Runs all six checks in their fixed order.
pub fn run_checks(probe: &StationProbe, now: SimTime) -> Vec<LocalCheckResult> {
    let age = now.since(probe.last_data_at);
    let stale_after = probe.data_interval * STALE_INTERVALS;
    Vec::from([
        result(
            CheckName::DiskSpace,
            probe.disk_used <= probe.disk_quota,
            format!("{} of {} bytes used", probe.disk_used, probe.disk_quota),
        ),
        result(
            CheckName::ClockSanity,
            probe.clock_offset_ms.unsigned_abs() <= probe.max_clock_offset_ms.unsigned_abs(),
            format!("offset {} ms", probe.clock_offset_ms),
        ),
        result(
            CheckName::ConfigDigest,
            probe.config_mismatches.is_empty(),
            if probe.config_mismatches.is_empty() {
                String::from("all applied configs intact")
            } else {
                format!("digest mismatch: {}", probe.config_mismatches.join(","))
            },
        ),
        result(
            CheckName::FrameworkAlive,
            probe.framework_alive,
            String::from(if probe.framework_alive { "responding" } else { "not responding" }),
        ),
        result(
            CheckName::DataCollectionFresh,
            age <= stale_after,
            format!("last sample {} ms ago", age.as_millis()),
        ),
        result(
            CheckName::LinkUp,
            probe.link_up,
            String::from(if probe.link_up { "up" } else { "down" }),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn healthy_station_passes_everything() {
        let r = run_checks(&StationProbe::default(), SimTime::from_secs(3));
        assert_eq!(r.len(), 6);
        assert!(r.iter().all(LocalCheckResult::passed));
        assert_eq!(r.iter().map(|c| c.check).collect::<Vec<_>>(), CheckName::ALL);
    }

    #[test]
    fn disk_over_quota() {
        let probe = StationProbe {
            disk_used: 1001,
            disk_quota: 1000,
            ..StationProbe::default()
        };
        let r = run_checks(&probe, SimTime::ZERO);
        let f = r[0].to_fault("irs-001", SimTime::ZERO).unwrap();
        assert_eq!((f.layer, f.severity), (FaultLayer::Os, Severity::Error));
        assert!(r[1..].iter().all(LocalCheckResult::passed));
    }

    #[test]
    fn framework_dead_is_critical() {
        let probe = StationProbe {
            framework_alive: false,
            ..StationProbe::default()
        };
        let f = run_checks(&probe, SimTime::ZERO)[3].to_fault("s", SimTime::ZERO).unwrap();
        assert_eq!((f.layer, f.severity), (FaultLayer::Framework, Severity::Critical));
    }

    #[test]
    fn severity_and_layer_maps() {
        use CheckName::*;
        let expect = [
            (DiskSpace, FaultLayer::Os, Severity::Error),
            (ClockSanity, FaultLayer::Os, Severity::Warning),
            (ConfigDigest, FaultLayer::Os, Severity::Error),
            (FrameworkAlive, FaultLayer::Framework, Severity::Critical),
            (DataCollectionFresh, FaultLayer::DataCollection, Severity::Warning),
            (LinkUp, FaultLayer::Network, Severity::Error),
        ];
        for (c, l, s) in expect {
            assert_eq!((c.layer(), c.severity()), (l, s), "{}", c.as_str());
        }
    }

    proptest! {
        // Stale iff more than two whole intervals have passed, checked in
        // milliseconds against the probe's microsecond arithmetic.
        #[test]
        fn staleness_threshold(interval_ms in 1u64..20_000, last_ms in 0u64..100_000, gap_ms in 0u64..100_000) {
            let probe = StationProbe {
                last_data_at: SimTime::from_millis(last_ms),
                data_interval: Duration::from_millis(interval_ms),
                ..StationProbe::default()
            };
            let now = SimTime::from_millis(last_ms + gap_ms);
            let fresh = run_checks(&probe, now)[4].passed();
            prop_assert_eq!(fresh, gap_ms <= 2 * interval_ms);
            if !fresh {
                let f = run_checks(&probe, now)[4].to_fault("s", now).unwrap();
                prop_assert_eq!((f.layer, f.severity), (FaultLayer::DataCollection, Severity::Warning));
            }
        }
    }
}
