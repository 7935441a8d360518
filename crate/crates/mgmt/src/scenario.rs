//! Scenario documents: fleet, packages, and a timeline of directives.
//! The schema is described in `scenarios/README.md`.

use std::collections::{BTreeMap, BTreeSet};

use irs_core::fleet::fleet_bootstrap;
use irs_core::model::{FaultLayer, MsgType, Origin};
use irs_core::{
    validate_manifest, Activation, LinkProfile, RawManifest, RegionClass, ResourceQuota, Severity, StationIdentity,
};
use serde::{Deserialize, Serialize};

use crate::archive::{payload_digest, PackageArchive};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

/// Metrics an ASSERT may name.
pub const METRICS: &[&str] = &[
    "converged",
    "convergence_time_max",
    "heartbeats_lost",
    "ping_rtt_max",
    "fault_count",
    "operator_directives",
    "agent_state",
    "health",
    "installed_version",
    "acked_write_loss",
    "dispatch_skew",
    "sf_len",
    "broadcasts",
    "function_bytes",
    "liveness",
    "reported_matches_desired",
];

fn default_workers() -> usize {
    3
}

fn default_heartbeat() -> f64 {
    10.0
}

fn default_latency_ms() -> u64 {
    20
}

fn default_neighbors() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval: f64,
    /// Center-to-station PING period; none when absent.
    #[serde(default)]
    pub ping_interval: Option<f64>,
    #[serde(default = "default_latency_ms")]
    pub worker_latency_ms: u64,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    /// Stagger station boots over this many seconds.
    #[serde(default)]
    pub boot_spread: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            heartbeat_interval: default_heartbeat(),
            ping_interval: None,
            worker_latency_ms: default_latency_ms(),
            neighbors: default_neighbors(),
            boot_spread: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub id: String,
    #[serde(default)]
    pub hardware: Option<String>,
    pub profile: String,
    pub region: RegionClass,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<BTreeMap<RegionClass, f64>>,
    #[serde(default)]
    pub stations: Vec<StationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Traffic {
    /// Offered load in bytes per second.
    pub rate: u64,
    pub frame: u64,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub stop: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Behavior {
    #[serde(default)]
    pub provides: Vec<String>,
    #[serde(default)]
    pub requires: Vec<String>,
    #[serde(default)]
    pub traffic: Option<Traffic>,
}

fn default_type() -> String {
    "FUNCTION".into()
}

fn default_priority() -> i64 {
    100
}

fn default_quota() -> ResourceQuota {
    ResourceQuota {
        cpu_share: 100,
        ram: 16 << 20,
        disk: 16 << 20,
        bandwidth_up: 200,
        bandwidth_v2i: 1000,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageSpec {
    pub name: String,
    pub version: String,
    #[serde(default = "default_type", rename = "type")]
    pub pkg_type: String,
    #[serde(default)]
    pub depends: Vec<(String, String)>,
    #[serde(default = "default_priority")]
    pub priority: i64,
    #[serde(default = "default_quota")]
    pub quota: ResourceQuota,
    /// Payload files as text, keyed by path.
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
    #[serde(default)]
    pub behavior: Behavior,
}

impl PackageSpec {
    pub fn archive(&self) -> Result<PackageArchive, ScenarioError> {
        let mut payload: BTreeMap<String, Vec<u8>> =
            self.payload.iter().map(|(k, v)| (k.clone(), v.as_bytes().to_vec())).collect();
        if payload.is_empty() {
            payload.insert("bin".into(), format!("{} {}", self.name, self.version).into_bytes());
        }
        let raw = RawManifest {
            name: Some(self.name.clone()),
            version: Some(self.version.clone()),
            pkg_type: Some(self.pkg_type.clone()),
            depends: Some(self.depends.clone()),
            priority: Some(self.priority),
            quota: Some(self.quota),
            payload_digest: Some(payload_digest(&payload)),
        };
        let manifest = validate_manifest(&raw).map_err(|e| ScenarioError::Invalid(format!("package `{}`: {e}", self.name)))?;
        Ok(PackageArchive { manifest, payload })
    }
}

/// `all`, one station id, or a list of ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    One(String),
    Many(Vec<String>),
}

impl Targets {
    pub fn resolve(&self, fleet: &[String]) -> Vec<String> {
        match self {
            Targets::One(s) if s == "all" => fleet.to_vec(),
            Targets::One(s) => vec![s.clone()],
            Targets::Many(v) => v.clone(),
        }
    }
}

fn default_one() -> u32 {
    1
}

fn default_spacing() -> f64 {
    30.0
}

fn default_error() -> Severity {
    Severity::Error
}

fn default_active() -> Activation {
    Activation::Active
}

fn default_center() -> Origin {
    Origin::Center
}

fn default_op() -> String {
    "==".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub station: String,
    pub layer: FaultLayer,
    #[serde(default = "default_error")]
    pub severity: Severity,
    #[serde(default)]
    pub subject: String,
    #[serde(default = "default_one")]
    pub repeat: u32,
    /// Seconds between repeats.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Ladder rung index from which the fault clears; persistent if absent.
    #[serde(default)]
    pub clears_after: Option<usize>,
    /// Corrupt the next N downloads of `subject` instead.
    #[serde(default)]
    pub corrupt_downloads: Option<u32>,
    /// For NETWORK and DATA_COLLECTION faults: how long the outage lasts.
    #[serde(default)]
    pub duration: Option<f64>,
    /// Reboot the station with this fault in its boot sequence.
    #[serde(default)]
    pub at_boot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Directive {
    Assign {
        stations: Targets,
        package: String,
        version: String,
        #[serde(default = "default_active")]
        activation: Activation,
    },
    Configure {
        stations: Targets,
        app: String,
        entries: BTreeMap<String, String>,
    },
    InjectFault(FaultSpec),
    KillWorker {
        worker: String,
    },
    ReplaceHardware {
        station: String,
        hardware: String,
    },
    PostV2i {
        stations: Targets,
        msg_id: u64,
        msg_type: MsgType,
        priority: u8,
        size: u32,
        /// Seconds until expiry.
        ttl: f64,
        redundancy: u32,
        #[serde(default = "default_center")]
        origin: Origin,
    },
    SetChannelLoad {
        stations: Targets,
        load: f64,
        #[serde(default)]
        neighbors: Option<usize>,
    },
    Assert {
        metric: String,
        #[serde(default)]
        station: Option<String>,
        #[serde(default)]
        app: Option<String>,
        #[serde(default = "default_op")]
        op: String,
        value: serde_yaml::Value,
    },
}

impl Directive {
    pub fn kind(&self) -> &'static str {
        match self {
            Directive::Assign { .. } => "ASSIGN",
            Directive::Configure { .. } => "CONFIGURE",
            Directive::InjectFault(_) => "INJECT_FAULT",
            Directive::KillWorker { .. } => "KILL_WORKER",
            Directive::ReplaceHardware { .. } => "REPLACE_HARDWARE",
            Directive::PostV2i { .. } => "POST_V2I",
            Directive::SetChannelLoad { .. } => "SET_CHANNEL_LOAD",
            Directive::Assert { .. } => "ASSERT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    /// Seconds of virtual time.
    pub at: f64,
    #[serde(flatten)]
    pub directive: Directive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Seconds of virtual time.
    pub duration: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub settings: Settings,
    pub fleet: FleetSpec,
    /// Added to, or replacing, the built-in profiles by name.
    #[serde(default)]
    pub link_profiles: Vec<LinkProfile>,
    #[serde(default)]
    pub packages: Vec<PackageSpec>,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scenario serializes")
    }

    pub fn worker_ids(&self) -> Vec<String> {
        (1..=self.workers).map(|i| format!("w{i}")).collect()
    }

    pub fn profiles(&self) -> Vec<LinkProfile> {
        let mut by_name: BTreeMap<String, LinkProfile> =
            irs_core::builtin_link_profiles().into_iter().map(|p| (p.name.clone(), p)).collect();
        for p in &self.link_profiles {
            by_name.insert(p.name.clone(), p.clone());
        }
        by_name.into_values().collect()
    }

    /// Generated stations first, then the explicit list.
    pub fn stations(&self) -> Result<Vec<StationIdentity>, ScenarioError> {
        let mut out = Vec::new();
        if let Some(count) = self.fleet.count {
            let mix = self
                .fleet
                .mix
                .clone()
                .unwrap_or_else(|| RegionClass::ALL.iter().map(|r| (*r, 0.25)).collect());
            out = fleet_bootstrap(count as usize, &mix).map_err(|e| ScenarioError::Invalid(format!("fleet: {e}")))?;
        }
        for s in &self.fleet.stations {
            out.push(StationIdentity {
                logical_id: s.id.clone(),
                hardware_id: s.hardware.clone().unwrap_or_else(|| format!("hw-{}", s.id)),
                link_profile: s.profile.clone(),
                region_class: s.region,
            });
        }
        Ok(out)
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations().map(|v| v.into_iter().map(|s| s.logical_id).collect()).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.duration.is_nan() || self.duration <= 0.0 {
            return invalid("duration must be positive".into());
        }
        if self.workers == 0 {
            return invalid("at least one worker is required".into());
        }
        for p in &self.link_profiles {
            p.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        let stations = self.stations()?;
        if stations.is_empty() {
            return invalid("fleet is empty".into());
        }
        let profiles: BTreeSet<String> = self.profiles().into_iter().map(|p| p.name).collect();
        let mut ids = BTreeSet::new();
        let mut hws = BTreeSet::new();
        for s in &stations {
            if !ids.insert(s.logical_id.clone()) {
                return invalid(format!("duplicate station `{}`", s.logical_id));
            }
            if !hws.insert(s.hardware_id.clone()) {
                return invalid(format!("duplicate hardware id `{}`", s.hardware_id));
            }
            if !profiles.contains(&s.link_profile) {
                return invalid(format!("unknown link profile `{}`", s.link_profile));
            }
        }
        let mut packages = BTreeSet::new();
        for p in &self.packages {
            p.archive()?;
            if !packages.insert(p.name.clone()) {
                return invalid(format!("package `{}` defined twice", p.name));
            }
        }
        let ids: Vec<String> = ids.into_iter().collect();
        let workers = self.worker_ids();
        let mut last = 0.0;
        for e in &self.timeline {
            if e.at.is_nan() || e.at < last {
                return invalid(format!("timeline time {} goes backwards", e.at));
            }
            last = e.at;
            check_directive(&e.directive, &ids, &workers)?;
        }
        Ok(())
    }
}

fn check_targets(t: &Targets, ids: &[String]) -> Result<(), ScenarioError> {
    for s in t.resolve(ids) {
        if !ids.contains(&s) {
            return Err(ScenarioError::UnknownTarget(s));
        }
    }
    Ok(())
}

fn check_directive(d: &Directive, ids: &[String], workers: &[String]) -> Result<(), ScenarioError> {
    let station = |s: &String| {
        if ids.contains(s) {
            Ok(())
        } else {
            Err(ScenarioError::UnknownTarget(s.clone()))
        }
    };
    match d {
        Directive::Assign { stations, .. }
        | Directive::Configure { stations, .. }
        | Directive::PostV2i { stations, .. }
        | Directive::SetChannelLoad { stations, .. } => check_targets(stations, ids),
        Directive::InjectFault(f) => station(&f.station),
        Directive::ReplaceHardware { station: s, .. } => station(s),
        Directive::KillWorker { worker } => {
            if workers.contains(worker) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownTarget(worker.clone()))
            }
        }
        Directive::Assert { metric, station: s, op, .. } => {
            if !METRICS.contains(&metric.as_str()) {
                return Err(ScenarioError::UnknownMetric(metric.clone()));
            }
            if !["==", "!=", "<", "<=", ">", ">="].contains(&op.as_str()) {
                return Err(ScenarioError::Invalid(format!("unknown comparison `{op}`")));
            }
            s.as_ref().map_or(Ok(()), station)
        }
    }
}

/// Builds an INJECT_FAULT entry after checking the target exists.
pub fn inject(scenario: &Scenario, at: f64, spec: FaultSpec) -> Result<TimelineEntry, ScenarioError> {
    if !scenario.station_ids().contains(&spec.station) {
        return Err(ScenarioError::UnknownTarget(spec.station));
    }
    Ok(TimelineEntry {
        at,
        directive: Directive::InjectFault(spec),
    })
}

/// A scenario fragment with the fleet generated from `count` and `mix`.
pub fn bootstrap_fragment(count: u32, mix: &BTreeMap<RegionClass, f64>) -> Result<String, ScenarioError> {
    let stations = fleet_bootstrap(count as usize, mix).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let fleet = FleetSpec {
        count: None,
        mix: None,
        stations: stations
            .into_iter()
            .map(|s| StationSpec {
                id: s.logical_id,
                hardware: Some(s.hardware_id),
                profile: s.link_profile,
                region: s.region_class,
            })
            .collect(),
    };
    #[derive(Serialize)]
    struct Fragment {
        fleet: FleetSpec,
    }
    Ok(serde_yaml::to_string(&Fragment { fleet }).expect("fragment serializes"))
}
