//! The station-side agent: phased boot, local configuration management,
//! local fault management with the strategy ladder, and the frames it
//! sends to the center.
//!
//! The agent is a plain state machine. It never touches the network; the
//! simulation drains [`Agent::take_outbox`] and feeds inbound frames back.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{DateTime, SecondsFormat};
use irs_core::backoff::Backoff;
use irs_core::checks::{run_checks, CheckName, LocalCheckResult, StationProbe};
use irs_core::decision::Decision;
use irs_core::framework::{FrameworkStatus, FunctionFramework, FunctionState, ManagementFramework, ServiceDecl};
use irs_core::ladder::{Strategy, StrategyLadder};
use irs_core::ledger::{Grant, Requester, Resource, ResourceLedger, DEFAULT_RESERVED_PERMILLE};
use irs_core::logs::{analyze, default_rules, LogLevel, LogLine, LogRule};
use irs_core::model::{FaultLayer, SYSTEM_APP};
use irs_core::sfbuffer::{Enqueue, SfBuffer, SfConfig};
use irs_core::{
    Action, ConfigSet, FaultEvent, FunctionHealth, PackageManifest, ReportedState, Severity, SimTime, StationIdentity,
    V2iMessage, Version,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::PackageArchive;
use crate::wire::{ArchiveBlob, Frame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentState {
    Booting,
    Running,
    ManagementOnly,
    Failed,
}

impl AgentState {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentState::Booting => "BOOTING",
            AgentState::Running => "RUNNING",
            AgentState::ManagementOnly => "MANAGEMENT_ONLY",
            AgentState::Failed => "FAILED",
        }
    }

    /// Whether the management side is up and talking to the center.
    pub fn is_reachable(self) -> bool {
        matches!(self, AgentState::Running | AgentState::ManagementOnly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BootPhase {
    OsBoot,
    FrameworkStart,
    FunctionsStart,
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhaseOutcome {
    Ok,
    Failed,
}

/// Faults to inject into the next boot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootFaults {
    pub os: bool,
    pub framework: bool,
    /// A framework fault that survives restarts.
    #[serde(default)]
    pub framework_persistent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BootReport {
    pub phases: Vec<(BootPhase, PhaseOutcome)>,
    pub events: Vec<FaultEvent>,
    pub hello_sent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstallError {
    #[error("payload digest {actual} does not match manifest {expected}")]
    DigestMismatch { expected: String, actual: String },
    #[error("missing dependency `{0}`")]
    MissingDependency(String),
    #[error("payload of {need} bytes exceeds disk allowance of {allowed}")]
    DiskQuotaExceeded { need: u64, allowed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstallOutcome {
    Installed,
    AlreadyPresent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstalledPackage {
    pub manifest: PackageManifest,
    /// Unpacked files keyed `name/version/path`.
    pub files: BTreeMap<String, Vec<u8>>,
    pub size: u64,
    /// Kept for REINSTALL_PACKAGE.
    pub archive: PackageArchive,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrategyOutcome {
    pub rung: Strategy,
    pub recovered: bool,
    pub forwarded: FaultEvent,
}

/// A fault the harness is holding on a subject. It clears once a rung at
/// or above `clears_at` is applied; `None` never clears.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveFault {
    pub clears_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub heartbeat_interval: std::time::Duration,
    pub data_interval: std::time::Duration,
    pub disk_capacity: u64,
    pub ram_capacity: u64,
    pub reserved_permille: u64,
    pub log_capacity: usize,
    pub sf: SfConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            heartbeat_interval: std::time::Duration::from_secs(10),
            data_interval: irs_core::checks::DEFAULT_DATA_INTERVAL,
            disk_capacity: 256 << 20,
            ram_capacity: 512 << 20,
            reserved_permille: DEFAULT_RESERVED_PERMILLE,
            log_capacity: 4096,
            sf: SfConfig::default(),
        }
    }
}

pub const FRAMEWORK_SUBJECT: &str = "framework";

/// Virtual time zero is rendered as the Unix epoch.
pub fn iso_timestamp(t: SimTime) -> String {
    let us = t.as_micros();
    DateTime::from_timestamp((us / 1_000_000) as i64, ((us % 1_000_000) * 1000) as u32)
        .expect("in range")
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn format_log_line(l: &LogLine) -> String {
    format!("{} {} {}: {}", iso_timestamp(l.at), l.level.as_str(), l.subject, l.message)
}

fn config_digest(c: &ConfigSet) -> String {
    let mut h = Sha256::new();
    for (k, v) in &c.entries {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub struct Agent {
    pub identity: StationIdentity,
    pub config: AgentConfig,
    state: AgentState,
    framework: FunctionFramework,
    management: ManagementFramework,
    ladder: StrategyLadder,
    pub backoff: Backoff,
    packages: BTreeMap<String, InstalledPackage>,
    intended_active: BTreeSet<String>,
    configs: BTreeMap<String, (ConfigSet, String)>,
    services: BTreeMap<String, ServiceDecl>,
    ledger: ResourceLedger,
    log: VecDeque<LogLine>,
    pub probe: StationProbe,
    checks_failing: BTreeSet<CheckName>,
    active_faults: BTreeMap<String, ActiveFault>,
    boot_faults: BootFaults,
    /// Remaining corrupted downloads per package name.
    corrupt_downloads: BTreeMap<String, u32>,
    data_stalled: bool,
    pub sf: SfBuffer,
    seq: u64,
    outbox: Vec<Frame>,
    log_rules: Vec<LogRule>,
    last_log_scan: SimTime,
}

impl Agent {
    pub fn new(identity: StationIdentity, config: AgentConfig, services: BTreeMap<String, ServiceDecl>) -> Self {
        let capacity = BTreeMap::from([
            (Resource::Cpu, 1000),
            (Resource::Ram, config.ram_capacity),
            (Resource::Disk, config.disk_capacity),
            (Resource::BandwidthUp, u64::MAX),
            (Resource::BandwidthV2i, u64::MAX),
        ]);
        Agent {
            identity,
            ledger: ResourceLedger::new(capacity, config.reserved_permille),
            probe: StationProbe {
                disk_quota: config.disk_capacity,
                data_interval: config.data_interval,
                ..StationProbe::default()
            },
            sf: SfBuffer::new(config.sf),
            config,
            state: AgentState::Booting,
            framework: FunctionFramework::new(),
            management: ManagementFramework::default(),
            ladder: StrategyLadder::default(),
            backoff: Backoff::default(),
            packages: BTreeMap::new(),
            intended_active: BTreeSet::new(),
            configs: BTreeMap::new(),
            services,
            log: VecDeque::new(),
            checks_failing: BTreeSet::new(),
            active_faults: BTreeMap::new(),
            boot_faults: BootFaults::default(),
            corrupt_downloads: BTreeMap::new(),
            data_stalled: false,
            seq: 0,
            outbox: Vec::new(),
            log_rules: default_rules(),
            last_log_scan: SimTime::ZERO,
        }
    }

    pub fn state(&self) -> AgentState {
        self.state
    }

    pub fn station(&self) -> &str {
        &self.identity.logical_id
    }

    pub fn framework(&self) -> &FunctionFramework {
        &self.framework
    }

    pub fn management_framework_alive(&self) -> bool {
        self.management.is_alive()
    }

    pub fn ledger(&self) -> &ResourceLedger {
        &self.ledger
    }

    pub fn packages(&self) -> &BTreeMap<String, InstalledPackage> {
        &self.packages
    }

    pub fn log_lines(&self) -> impl Iterator<Item = &LogLine> {
        self.log.iter()
    }

    pub fn take_outbox(&mut self) -> Vec<Frame> {
        std::mem::take(&mut self.outbox)
    }

    pub fn set_boot_faults(&mut self, f: BootFaults) {
        self.boot_faults = f;
    }

    pub fn corrupt_next_downloads(&mut self, package: &str, count: u32) {
        self.corrupt_downloads.insert(package.into(), count);
    }

    pub fn set_data_stalled(&mut self, stalled: bool) {
        self.data_stalled = stalled;
    }

    pub fn set_link_up(&mut self, up: bool) {
        self.probe.link_up = up;
    }

    pub fn log(&mut self, at: SimTime, level: LogLevel, subject: &str, message: impl Into<String>) {
        if self.log.len() >= self.config.log_capacity {
            self.log.pop_front();
        }
        self.log.push_back(LogLine {
            at,
            level,
            subject: subject.into(),
            message: message.into(),
        });
    }

    fn emit_fault(&mut self, event: FaultEvent, strategy: Option<Strategy>) {
        let level = if event.severity >= Severity::Error { LogLevel::Error } else { LogLevel::Warn };
        let msg = match strategy {
            Some(s) => format!("{:?} {:?}: {} -> {}", event.layer, event.severity, event.detail, s.as_str()),
            None => format!("{:?} {:?}: {}", event.layer, event.severity, event.detail),
        };
        self.log(event.occurred_at, level, &event.subject.clone(), msg);
        if self.state.is_reachable() {
            self.outbox.push(Frame::Fault { event, strategy });
        }
    }

    fn event(&self, layer: FaultLayer, severity: Severity, subject: &str, now: SimTime, detail: impl Into<String>) -> FaultEvent {
        FaultEvent::new(self.station(), layer, severity, subject, now, detail)
    }

    fn hello(&mut self, now: SimTime) {
        self.outbox.push(Frame::Hello {
            station: self.identity.logical_id.clone(),
            hardware_id: self.identity.hardware_id.clone(),
            sent_at: now,
            state: self.state,
            reported: self.reported(),
        });
    }

    /// OS boot, framework start, function start. A framework failure leaves
    /// the management side up; an OS failure leaves nothing up.
    pub fn boot(&mut self, now: SimTime) -> BootReport {
        let mut phases = Vec::new();
        let mut events = Vec::new();
        self.state = AgentState::Booting;
        if self.boot_faults.os {
            phases.push((BootPhase::OsBoot, PhaseOutcome::Failed));
            self.state = AgentState::Failed;
            self.management.halt();
            self.log(now, LogLevel::Error, "os", "boot failed");
            return BootReport {
                phases,
                events,
                hello_sent: false,
            };
        }
        phases.push((BootPhase::OsBoot, PhaseOutcome::Ok));
        self.management.start();
        self.log(now, LogLevel::Info, "os", "boot complete");

        if self.boot_faults.framework {
            phases.push((BootPhase::FrameworkStart, PhaseOutcome::Failed));
            self.framework.fault();
            self.state = AgentState::ManagementOnly;
            let ev = self.event(FaultLayer::Framework, Severity::Critical, FRAMEWORK_SUBJECT, now, "framework failed to start");
            events.push(ev.clone());
            self.hello(now);
            self.emit_fault(ev, None);
            return BootReport {
                phases,
                events,
                hello_sent: true,
            };
        }
        phases.push((BootPhase::FrameworkStart, PhaseOutcome::Ok));

        let intended: Vec<String> = self.intended_active.iter().cloned().collect();
        let failed = self.framework.restart(&intended);
        for f in &failed {
            let ev = self.event(FaultLayer::Function, Severity::Error, f, now, "failed to start");
            events.push(ev);
        }
        phases.push((
            BootPhase::FunctionsStart,
            if failed.is_empty() { PhaseOutcome::Ok } else { PhaseOutcome::Failed },
        ));
        phases.push((BootPhase::Running, PhaseOutcome::Ok));
        self.state = AgentState::Running;
        self.hello(now);
        for ev in events.clone() {
            self.emit_fault(ev, None);
        }
        BootReport {
            phases,
            events,
            hello_sent: true,
        }
    }

    pub fn reported(&self) -> ReportedState {
        let installed: BTreeMap<String, Version> =
            self.packages.iter().map(|(n, p)| (n.clone(), p.manifest.version)).collect();
        let active: BTreeSet<String> =
            self.intended_active.iter().filter(|n| installed.contains_key(*n)).cloned().collect();
        let health = installed
            .keys()
            .map(|n| {
                let h = match self.framework.handle(n).map(|h| h.state) {
                    Some(FunctionState::Active) => FunctionHealth::Running,
                    Some(FunctionState::Faulted) => FunctionHealth::Faulted,
                    _ if active.contains(n) => FunctionHealth::Faulted,
                    _ => FunctionHealth::Stopped,
                };
                (n.clone(), h)
            })
            .collect();
        ReportedState {
            installed,
            active,
            applied_config_versions: self.configs.iter().map(|(a, (c, _))| (a.clone(), c.version)).collect(),
            health,
        }
    }

    /// Builds the periodic REPORT, running the local checks on the way.
    pub fn heartbeat(&mut self, now: SimTime) -> Option<Frame> {
        if !self.state.is_reachable() {
            return None;
        }
        let checks = self.local_verify(now);
        self.seq += 1;
        Some(Frame::Report {
            station: self.identity.logical_id.clone(),
            seq: self.seq,
            sent_at: now,
            state: self.state,
            reported: self.reported(),
            checks,
        })
    }

    pub fn collect_sample(&mut self, now: SimTime) {
        if !self.data_stalled {
            self.probe.last_data_at = now;
        }
    }

    fn refresh_probe(&mut self) {
        self.probe.disk_used = self.packages.values().map(|p| p.size).sum();
        self.probe.framework_alive = self.framework.status() == FrameworkStatus::Running;
        self.probe.config_mismatches = self
            .configs
            .iter()
            .filter(|(_, (c, d))| config_digest(c) != *d)
            .map(|(a, _)| a.clone())
            .collect();
    }

    /// Runs the six checks. A check that newly fails raises a fault.
    pub fn local_verify(&mut self, now: SimTime) -> Vec<LocalCheckResult> {
        self.refresh_probe();
        let results = run_checks(&self.probe, now);
        for r in &results {
            if r.passed() {
                self.checks_failing.remove(&r.check);
            } else if self.checks_failing.insert(r.check) {
                let ev = r.to_fault(self.station(), now).expect("failed check");
                self.emit_fault(ev, None);
            }
        }
        results
    }

    /// Scans the log since the previous scan.
    pub fn analyze_logs(&mut self, now: SimTime) -> Vec<FaultEvent> {
        let lines: Vec<LogLine> = self.log.iter().cloned().collect();
        let events = analyze(self.station(), &lines, self.last_log_scan, now, &self.log_rules);
        self.last_log_scan = now;
        for ev in events.clone() {
            self.emit_fault(ev, None);
        }
        events
    }

    pub fn install_package(&mut self, archive: PackageArchive) -> Result<InstallOutcome, InstallError> {
        let m = &archive.manifest;
        let actual = archive.actual_digest();
        if actual != m.payload_digest {
            return Err(InstallError::DigestMismatch {
                expected: m.payload_digest.clone(),
                actual,
            });
        }
        if let Some(p) = self.packages.get(&m.name) {
            if p.manifest.version == m.version && p.manifest.payload_digest == m.payload_digest {
                return Ok(InstallOutcome::AlreadyPresent);
            }
        }
        for d in &m.depends {
            if !self.packages.get(&d.name).is_some_and(|p| p.manifest.version >= d.min_version) {
                return Err(InstallError::MissingDependency(d.name.clone()));
            }
        }
        let size = archive.payload_size();
        if size > m.quota.disk {
            return Err(InstallError::DiskQuotaExceeded {
                need: size,
                allowed: m.quota.disk,
            });
        }
        let others: u64 = self.packages.iter().filter(|(n, _)| **n != m.name).map(|(_, p)| p.size).sum();
        if others + size > self.config.disk_capacity {
            return Err(InstallError::DiskQuotaExceeded {
                need: size,
                allowed: self.config.disk_capacity.saturating_sub(others),
            });
        }
        let files = archive
            .payload
            .iter()
            .map(|(path, b)| (format!("{}/{}/{}", m.name, m.version, path), b.clone()))
            .collect();
        let name = m.name.clone();
        self.remove_package(&name);
        let services = self.services.get(&name).cloned().unwrap_or_default();
        let _ = self.framework.register_function(&archive.manifest, services);
        self.packages.insert(
            name,
            InstalledPackage {
                manifest: archive.manifest.clone(),
                files,
                size,
                archive,
            },
        );
        Ok(InstallOutcome::Installed)
    }

    fn remove_package(&mut self, name: &str) {
        self.framework.unregister(name);
        self.ledger.release_all(name);
        self.packages.remove(name);
    }

    fn activate(&mut self, name: &str) -> Result<(), String> {
        let Some(pkg) = self.packages.get(name) else {
            return Err("not installed".into());
        };
        let manifest = pkg.manifest.clone();
        let who = Requester {
            name,
            kind: manifest.pkg_type,
            active: true,
            quota: manifest.quota,
        };
        if self.ledger.usage_of(name, Resource::Ram) == 0 {
            for r in [Resource::Ram, Resource::Cpu] {
                let amount = r.limit(&manifest.quota);
                if let Grant::Denied(why) = self.ledger.try_acquire(&who, r, amount) {
                    self.ledger.release_all(name);
                    return Err(format!("{r:?} denied: {why:?}"));
                }
            }
        }
        let state = self.framework.handle(name).map(|h| h.state);
        let step = |fw: &mut FunctionFramework| -> Result<(), irs_core::framework::FrameworkError> {
            match state {
                Some(FunctionState::Active) => Ok(()),
                Some(FunctionState::Installed) => {
                    fw.resolve(name)?;
                    fw.set_state(name, FunctionState::Active).map(|_| ())
                }
                Some(FunctionState::Faulted) => {
                    fw.set_state(name, FunctionState::Resolved)?;
                    fw.set_state(name, FunctionState::Active).map(|_| ())
                }
                _ => fw.set_state(name, FunctionState::Active).map(|_| ()),
            }
        };
        step(&mut self.framework).map_err(|e| {
            self.ledger.release_all(name);
            e.to_string()
        })?;
        self.intended_active.insert(name.into());
        if self.active_faults.contains_key(name) {
            let _ = self.framework.set_state(name, FunctionState::Faulted);
        }
        Ok(())
    }

    fn deactivate(&mut self, name: &str) {
        match self.framework.handle(name).map(|h| h.state) {
            Some(FunctionState::Active) => {
                let _ = self.framework.set_state(name, FunctionState::Stopped);
            }
            Some(FunctionState::Faulted) => {
                let _ = self.framework.set_state(name, FunctionState::Resolved);
            }
            _ => {}
        }
        self.ledger.release_all(name);
        self.intended_active.remove(name);
    }

    fn fetch(&mut self, name: &str, version: Version, archives: &[ArchiveBlob]) -> Result<PackageArchive, String> {
        let blob = archives
            .iter()
            .find(|b| b.name == name && b.version == version)
            .ok_or_else(|| "archive not supplied".to_string())?;
        let mut archive = blob.archive().map_err(|e| e.to_string())?;
        if let Some(n) = self.corrupt_downloads.get_mut(name) {
            if *n > 0 {
                *n -= 1;
                if let Some(first) = archive.payload.values_mut().next() {
                    first.push(0xff);
                } else {
                    archive.payload.insert("corrupt".into(), vec![0xff]);
                }
            }
        }
        Ok(archive)
    }

    /// Applies `actions` in order. Each action stands alone; once an action
    /// on a package fails, later actions on that package are skipped.
    pub fn reconcile(&mut self, actions: &[Action], archives: &[ArchiveBlob], now: SimTime) -> ReportedState {
        self.apply_action_list(actions, archives, now);
        self.reported()
    }

    /// Returns the targets whose actions failed.
    fn apply_action_list(&mut self, actions: &[Action], archives: &[ArchiveBlob], now: SimTime) -> BTreeSet<String> {
        let mut failed: BTreeSet<String> = BTreeSet::new();
        for action in actions {
            let target = action.target().to_string();
            if failed.contains(&target) {
                continue;
            }
            let result: Result<(), String> = match action {
                Action::Remove { name } => {
                    self.intended_active.remove(name);
                    self.remove_package(name);
                    Ok(())
                }
                Action::Install { name, version } => {
                    let was_active = self.intended_active.remove(name);
                    self.fetch(name, *version, archives)
                        .and_then(|a| self.install_package(a).map_err(|e| e.to_string()))
                        .map(|_| {
                            if was_active {
                                self.deactivate(name);
                            }
                        })
                        .inspect_err(|_| {
                            if was_active {
                                self.intended_active.insert(name.clone());
                            }
                        })
                }
                Action::Configure { app, config } => {
                    if app != SYSTEM_APP && !self.packages.contains_key(app) {
                        Err("application not installed".into())
                    } else {
                        self.configs.insert(app.clone(), (config.clone(), config_digest(config)));
                        Ok(())
                    }
                }
                Action::Activate { name } => self.activate(name),
                Action::Deactivate { name } => {
                    self.deactivate(name);
                    Ok(())
                }
            };
            let verb = match action {
                Action::Install { .. } => "install",
                Action::Remove { .. } => "remove",
                Action::Configure { .. } => "configure",
                Action::Activate { .. } => "activate",
                Action::Deactivate { .. } => "deactivate",
            };
            match result {
                Ok(()) => self.log(now, LogLevel::Info, &target, format!("{verb} ok")),
                Err(why) => {
                    failed.insert(target.clone());
                    let ev = self.event(FaultLayer::Function, Severity::Error, &target, now, format!("{verb} failed: {why}"));
                    self.emit_fault(ev, None);
                }
            }
        }
        failed
    }

    /// Puts a fault on `subject` and runs it through local fault handling.
    pub fn inject_fault(&mut self, layer: FaultLayer, severity: Severity, subject: &str, clears_at: Option<usize>, now: SimTime) -> Option<StrategyOutcome> {
        let ev = self.event(layer, severity, subject, now, "injected fault");
        match layer {
            FaultLayer::Function if self.framework.handle(subject).is_some() => {
                self.active_faults.insert(subject.into(), ActiveFault { clears_at });
                let _ = self.framework.set_state(subject, FunctionState::Faulted);
            }
            FaultLayer::Framework => {
                self.active_faults.insert(FRAMEWORK_SUBJECT.into(), ActiveFault { clears_at });
                self.framework.fault();
            }
            FaultLayer::DataCollection => self.data_stalled = true,
            _ => {}
        }
        Some(self.handle_fault(ev, now)).flatten()
    }

    fn fault_clears(&mut self, subject: &str, rung_idx: usize) -> bool {
        match self.active_faults.get(subject) {
            None => true,
            Some(f) if f.clears_at.is_some_and(|c| rung_idx >= c) => {
                self.active_faults.remove(subject);
                true
            }
            Some(_) => false,
        }
    }

    fn restart_framework(&mut self) -> BTreeSet<String> {
        let intended: Vec<String> = self.intended_active.iter().cloned().collect();
        let failed = self.framework.restart(&intended);
        for (subject, _) in self.active_faults.clone() {
            if subject == FRAMEWORK_SUBJECT {
                self.framework.fault();
            } else if self.framework.handle(&subject).is_some() {
                let _ = self.framework.set_state(&subject, FunctionState::Faulted);
            }
        }
        if self.framework.status() == FrameworkStatus::Running && self.state == AgentState::ManagementOnly {
            self.state = AgentState::Running;
        }
        failed
    }

    fn apply_strategy(&mut self, rung: Strategy, subject: &str, now: SimTime) -> bool {
        let idx = Strategy::LADDER.iter().position(|s| *s == rung).unwrap_or(0);
        let clears = self.fault_clears(subject, idx) && rung != Strategy::EscalateToCenter;
        if subject == FRAMEWORK_SUBJECT && clears {
            self.boot_faults.framework = self.boot_faults.framework_persistent;
        }
        match rung {
            Strategy::RestartFunction => {
                if subject == FRAMEWORK_SUBJECT {
                    return false;
                }
                if clears && self.intended_active.contains(subject) {
                    let _ = self.activate(subject);
                }
            }
            Strategy::RestartFramework => {
                if subject == FRAMEWORK_SUBJECT && self.boot_faults.framework {
                    self.active_faults.insert(FRAMEWORK_SUBJECT.into(), ActiveFault { clears_at: None });
                }
                self.restart_framework();
            }
            Strategy::ReinstallPackage => {
                if let Some(p) = self.packages.get(subject) {
                    let archive = p.archive.clone();
                    let was_active = self.intended_active.contains(subject);
                    self.packages.remove(subject);
                    self.framework.unregister(subject);
                    self.ledger.release_all(subject);
                    let ok = self.install_package(archive).is_ok();
                    if ok && was_active {
                        let _ = self.activate(subject);
                    }
                }
            }
            Strategy::RebootAgent => {
                self.framework = FunctionFramework::new();
                self.ledger = ResourceLedger::new(
                    Resource::ALL.iter().map(|r| (*r, self.ledger.capacity(*r))).collect(),
                    self.config.reserved_permille,
                );
                let pkgs: Vec<InstalledPackage> = self.packages.values().cloned().collect();
                for p in &pkgs {
                    let services = self.services.get(&p.manifest.name).cloned().unwrap_or_default();
                    let _ = self.framework.register_function(&p.manifest, services);
                }
                self.backoff.reset();
                self.boot(now);
                let intended: Vec<String> = self.intended_active.iter().cloned().collect();
                for n in intended {
                    let _ = self.activate(&n);
                }
            }
            Strategy::EscalateToCenter => {}
        }
        clears
    }

    /// Local fault handling. FUNCTION and FRAMEWORK faults of ERROR or worse
    /// climb the ladder; everything else is logged and forwarded.
    pub fn handle_fault(&mut self, event: FaultEvent, now: SimTime) -> Option<StrategyOutcome> {
        let laddered = matches!(event.layer, FaultLayer::Function | FaultLayer::Framework) && event.severity >= Severity::Error;
        if !laddered {
            self.emit_fault(event, None);
            return None;
        }
        let rung = self.ladder.on_fault(&event.subject, now);
        let recovered = self.apply_strategy(rung, &event.subject, now);
        let mut forwarded = event;
        forwarded.ladder_exhausted = rung == Strategy::EscalateToCenter;
        forwarded.detail = format!("{}; applied {}; recovered={}", forwarded.detail, rung.as_str(), recovered);
        self.emit_fault(forwarded.clone(), Some(rung));
        Some(StrategyOutcome {
            rung,
            recovered,
            forwarded,
        })
    }

    /// Hands a broadcast message to the local store-and-forward buffer.
    pub fn bridge_v2i(&mut self, msg: V2iMessage, now: SimTime) -> Enqueue {
        let id = msg.msg_id;
        let r = self.sf.enqueue(msg, now);
        if let Enqueue::Rejected(why) = r {
            let ev = self.event(FaultLayer::Network, Severity::Warning, "v2i", now, format!("message {id} rejected: {why:?}"));
            self.emit_fault(ev, None);
        }
        r
    }

    /// Inbound frames from the center.
    pub fn on_frame(&mut self, frame: Frame, now: SimTime) -> Option<Frame> {
        if !self.state.is_reachable() {
            return None;
        }
        match frame {
            Frame::Actions {
                actions, archives, v2i, ..
            } => {
                for m in v2i {
                    self.bridge_v2i(m, now);
                }
                if actions.is_empty() {
                    return None;
                }
                // After a failure the next regular heartbeat retries, so a
                // permanently broken package cannot spin the link.
                if self.apply_action_list(&actions, &archives, now).is_empty() {
                    self.heartbeat(now)
                } else {
                    None
                }
            }
            Frame::Decision { subject, decision, .. } => {
                for d in &decision.decisions {
                    self.log(now, LogLevel::Info, &subject, format!("center decision {d:?}"));
                    if let Decision::OrderStrategy(s) = d {
                        let recovered = self.apply_strategy(*s, &subject, now);
                        let ev = self.event(
                            FaultLayer::Framework,
                            Severity::Info,
                            &subject,
                            now,
                            format!("ordered {} applied; recovered={recovered}", s.as_str()),
                        );
                        self.emit_fault(ev, Some(*s));
                    }
                }
                None
            }
            Frame::Ping { nonce, sent_at } => Some(Frame::Pong { nonce, sent_at }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use irs_core::{Dependency, PackageType, RegionClass, ResourceQuota};

    fn identity() -> StationIdentity {
        StationIdentity {
            logical_id: "irs-001".into(),
            hardware_id: "hw-001".into(),
            link_profile: "FIBER".into(),
            region_class: RegionClass::Urban,
        }
    }

    fn agent() -> Agent {
        let mut a = Agent::new(identity(), AgentConfig::default(), BTreeMap::new());
        a.boot(SimTime::ZERO);
        a.take_outbox();
        a
    }

    fn archive(name: &str, deps: &[&str]) -> PackageArchive {
        PackageArchive::new(
            PackageManifest {
                name: name.into(),
                version: "1.0.0".parse().unwrap(),
                pkg_type: PackageType::Function,
                depends: deps
                    .iter()
                    .map(|d| Dependency {
                        name: (*d).into(),
                        min_version: "1.0.0".parse().unwrap(),
                    })
                    .collect(),
                priority: 100,
                quota: ResourceQuota {
                    cpu_share: 100,
                    ram: 1 << 20,
                    disk: 1 << 20,
                    bandwidth_up: 1000,
                    bandwidth_v2i: 1000,
                },
                payload_digest: String::new(),
            },
            BTreeMap::from([("bin".to_string(), name.as_bytes().to_vec())]),
        )
    }

    fn blob(a: &PackageArchive) -> ArchiveBlob {
        ArchiveBlob::from_bytes(&a.manifest.name, a.manifest.version, &a.to_zip())
    }

    #[test]
    fn boot_variants() {
        let mut a = Agent::new(identity(), AgentConfig::default(), BTreeMap::new());
        let r = a.boot(SimTime::ZERO);
        assert_eq!(a.state(), AgentState::Running);
        assert!(r.events.is_empty() && r.hello_sent);
        assert_eq!(r.phases.len(), 4);
        assert_eq!(a.take_outbox()[0].kind(), "HELLO");

        let mut a = Agent::new(identity(), AgentConfig::default(), BTreeMap::new());
        a.set_boot_faults(BootFaults { framework: true, ..Default::default() });
        let r = a.boot(SimTime::ZERO);
        assert_eq!(a.state(), AgentState::ManagementOnly);
        assert_eq!((r.events[0].layer, r.events[0].severity), (FaultLayer::Framework, Severity::Critical));
        assert!(a.management_framework_alive());
        assert!(a.heartbeat(SimTime::from_secs(10)).is_some());

        let mut a = Agent::new(identity(), AgentConfig::default(), BTreeMap::new());
        a.set_boot_faults(BootFaults { os: true, ..Default::default() });
        let r = a.boot(SimTime::ZERO);
        assert!(!r.hello_sent);
        assert!(a.take_outbox().is_empty());
        assert!(a.heartbeat(SimTime::from_secs(10)).is_none());
    }

    #[test]
    fn install_order_and_idempotence() {
        let mut a = agent();
        assert_eq!(a.install_package(archive("A", &["B"])), Err(InstallError::MissingDependency("B".into())));
        assert_eq!(a.install_package(archive("B", &[])), Ok(InstallOutcome::Installed));
        assert_eq!(a.install_package(archive("A", &["B"])), Ok(InstallOutcome::Installed));
        assert_eq!(a.install_package(archive("A", &["B"])), Ok(InstallOutcome::AlreadyPresent));
        assert!(a.packages()["A"].files.contains_key("A/1.0.0/bin"));
    }

    #[test]
    fn install_rejects_bad_digest_and_disk() {
        let mut a = agent();
        let mut bad = archive("A", &[]);
        bad.payload.insert("bin".into(), b"evil".to_vec());
        assert!(matches!(a.install_package(bad), Err(InstallError::DigestMismatch { .. })));
        assert!(a.packages().is_empty());
        let mut big = archive("B", &[]);
        big.manifest.quota.disk = 0;
        assert!(matches!(a.install_package(big), Err(InstallError::DiskQuotaExceeded { .. })));
    }

    #[test]
    fn reconcile_applies_and_isolates_failures() {
        let mut a = agent();
        let (pa, pb) = (archive("A", &["B"]), archive("B", &[]));
        let actions = vec![
            Action::Install { name: "B".into(), version: pb.manifest.version },
            Action::Install { name: "A".into(), version: pa.manifest.version },
            Action::Activate { name: "B".into() },
            Action::Activate { name: "A".into() },
        ];
        let r = a.reconcile(&actions, &[blob(&pa), blob(&pb)], SimTime::ZERO);
        assert_eq!(r.active.len(), 2);
        assert_eq!(r.health["A"], FunctionHealth::Running);
        assert!(a.take_outbox().is_empty());

        let mut a = agent();
        a.corrupt_next_downloads("A", 1);
        let r = a.reconcile(&actions, &[blob(&pa), blob(&pb)], SimTime::ZERO);
        assert!(!r.installed.contains_key("A"));
        assert!(r.active.contains("B"));
        let out = a.take_outbox();
        assert_eq!(out.len(), 1);
        match &out[0] {
            Frame::Fault { event, .. } => {
                assert_eq!((event.layer, event.severity, event.subject.as_str()), (FaultLayer::Function, Severity::Error, "A"))
            }
            f => panic!("unexpected {f:?}"),
        }
        let before = a.reported();
        assert_eq!(a.reconcile(&[], &[], SimTime::ZERO), before);
    }

    #[test]
    fn ladder_climbs_and_recovers() {
        let mut a = agent();
        let p = archive("f", &[]);
        a.reconcile(
            &[Action::Install { name: "f".into(), version: p.manifest.version }, Action::Activate { name: "f".into() }],
            &[blob(&p)],
            SimTime::ZERO,
        );
        let rungs: Vec<Strategy> = (0..5)
            .map(|i| {
                a.inject_fault(FaultLayer::Function, Severity::Error, "f", None, SimTime::from_secs(30 * i))
                    .unwrap()
                    .rung
            })
            .collect();
        assert_eq!(rungs, Strategy::LADDER);
        let out = a.take_outbox();
        let last = out.iter().rev().find_map(|f| match f {
            Frame::Fault { event, .. } => Some(event.clone()),
            _ => None,
        });
        assert!(last.unwrap().ladder_exhausted);
        assert_eq!(a.reported().health["f"], FunctionHealth::Faulted);

        let o = a.inject_fault(FaultLayer::Function, Severity::Error, "f", Some(0), SimTime::from_secs(5000)).unwrap();
        assert_eq!(o.rung, Strategy::RestartFunction);
        assert!(o.recovered);
        assert_eq!(a.reported().health["f"], FunctionHealth::Running);
        assert_eq!(a.state(), AgentState::Running);
    }

    #[test]
    fn checks_raise_faults_once() {
        let mut a = agent();
        a.set_data_stalled(true);
        assert!(a.local_verify(SimTime::from_secs(10)).iter().all(|c| c.passed()));
        let r = a.local_verify(SimTime::from_secs(11));
        assert!(!r[4].passed());
        a.local_verify(SimTime::from_secs(20));
        let faults: Vec<_> = a.take_outbox().into_iter().filter(|f| f.kind() == "FAULT").collect();
        assert_eq!(faults.len(), 1);
    }

    #[test]
    fn log_line_format() {
        let l = LogLine {
            at: SimTime::from_millis(61_500),
            level: LogLevel::Warn,
            subject: "f".into(),
            message: "retry".into(),
        };
        assert_eq!(format_log_line(&l), "1970-01-01T00:01:01.500Z WARN f: retry");
    }

    #[test]
    fn ping_is_answered() {
        let mut a = agent();
        let r = a.on_frame(Frame::Ping { nonce: 4, sent_at: SimTime::from_secs(1) }, SimTime::from_secs(2));
        assert_eq!(r, Some(Frame::Pong { nonce: 4, sent_at: SimTime::from_secs(1) }));
    }
}
