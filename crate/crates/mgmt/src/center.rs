//! The management center: configuration and fault management over the
//! shared store, behind a round-robin pool of stateless workers.

use std::collections::BTreeMap;

use irs_core::balancer::{PoolError, WorkerHealth, WorkerPool};
use irs_core::decision::{CentralDecision, Decision, DecisionTable};
use irs_core::ladder::Strategy;
use irs_core::model::SYSTEM_APP;
use irs_core::reconcile::{self, AssignError};
use irs_core::{
    Action, Activation, DesiredState, FaultEvent, RegionClass, ReportedState, Severity, SimTime, StationIdentity,
    V2iMessage, Version,
};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveError, PackageArchive};
use crate::store::{FaultRecord, Liveness, LivenessPolicy, RepoEntry, SnapshotError, StationRecord, Store};
use crate::wire::{ArchiveBlob, Frame};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CenterError {
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("hardware `{hardware_id}` is bound to `{bound_to}`")]
    HardwareIdInUse { hardware_id: String, bound_to: String },
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("{name} {version} already published with a different payload")]
    DuplicateVersionConflict { name: String, version: Version },
    #[error("package {name} {version} is not in the repository")]
    UnknownPackage { name: String, version: Version },
    #[error("dependency `{0}` cannot be satisfied from the repository")]
    DependencyUnsatisfiable(String),
    #[error("config key must be non-empty")]
    EmptyConfigKey,
    #[error("`{0}` is neither assigned to the station nor the system app")]
    UnassignedApp(String),
    #[error("unknown link profile `{0}`")]
    UnknownLinkProfile(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

impl From<AssignError> for CenterError {
    fn from(e: AssignError) -> Self {
        match e {
            AssignError::UnknownPackage { name, version } => CenterError::UnknownPackage { name, version },
            AssignError::DependencyUnsatisfiable(d) => CenterError::DependencyUnsatisfiable(d),
        }
    }
}

impl From<ArchiveError> for CenterError {
    fn from(e: ArchiveError) -> Self {
        CenterError::MalformedArchive(e.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetSummary {
    pub stations: usize,
    pub liveness: BTreeMap<Liveness, usize>,
    pub regions: BTreeMap<RegionClass, usize>,
    pub open_critical_faults: usize,
    pub drift: usize,
}

pub struct Center {
    pub store: Store,
    pub pool: WorkerPool,
    pub decisions: DecisionTable,
    pub liveness: LivenessPolicy,
    known_profiles: Vec<String>,
    outbox: Vec<(String, Frame)>,
}

impl Center {
    pub fn new<I, S>(workers: I, known_profiles: Vec<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Center {
            store: Store::default(),
            pool: WorkerPool::new(workers),
            decisions: DecisionTable::default(),
            liveness: LivenessPolicy::default(),
            known_profiles,
            outbox: Vec::new(),
        }
    }

    /// Frames the center wants delivered, addressed by logical id.
    pub fn take_outbox(&mut self) -> Vec<(String, Frame)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn dispatch(&mut self) -> Result<String, CenterError> {
        Ok(self.pool.dispatch()?)
    }

    pub fn worker_failover(&mut self, worker: &str, health: WorkerHealth) -> Result<(), CenterError> {
        Ok(self.pool.set_health(worker, health)?)
    }

    fn station(&self, id: &str) -> Result<&StationRecord, CenterError> {
        self.store
            .stations
            .get(id)
            .ok_or_else(|| CenterError::UnknownStation(id.into()))
    }

    fn station_mut(&mut self, id: &str) -> Result<&mut StationRecord, CenterError> {
        self.store
            .stations
            .get_mut(id)
            .ok_or_else(|| CenterError::UnknownStation(id.into()))
    }

    pub fn register_station(
        &mut self,
        hardware_id: &str,
        logical_id: &str,
        link_profile: &str,
        region_class: RegionClass,
    ) -> Result<StationRecord, CenterError> {
        if !self.known_profiles.is_empty() && !self.known_profiles.iter().any(|p| p == link_profile) {
            return Err(CenterError::UnknownLinkProfile(link_profile.into()));
        }
        if let Some(bound) = self.store.hardware.get(hardware_id) {
            if bound != logical_id {
                return Err(CenterError::HardwareIdInUse {
                    hardware_id: hardware_id.into(),
                    bound_to: bound.clone(),
                });
            }
        }
        let identity = StationIdentity {
            logical_id: logical_id.into(),
            hardware_id: hardware_id.into(),
            link_profile: link_profile.into(),
            region_class,
        };
        let record = match self.store.stations.get_mut(logical_id) {
            Some(rec) if rec.identity.hardware_id == hardware_id => {
                rec.identity = identity;
                rec.clone()
            }
            Some(rec) => {
                let old = std::mem::replace(&mut rec.identity, identity);
                rec.reported = None;
                rec.checks.clear();
                rec.agent_state = None;
                let rec = rec.clone();
                self.store.hardware.remove(&old.hardware_id);
                rec
            }
            None => {
                let rec = StationRecord {
                    identity,
                    desired: DesiredState::default(),
                    reported: None,
                    last_heartbeat: None,
                    agent_state: None,
                    checks: Vec::new(),
                    last_clean_report: None,
                };
                self.store.stations.insert(logical_id.into(), rec.clone());
                rec
            }
        };
        self.store.hardware.insert(hardware_id.into(), logical_id.into());
        self.store.bump();
        Ok(record)
    }

    pub fn publish_package(&mut self, zip: &[u8]) -> Result<(String, Version), CenterError> {
        let archive = PackageArchive::from_zip(zip)?;
        if !archive.digest_matches() {
            return Err(CenterError::MalformedArchive(format!(
                "payload digest {} does not match manifest {}",
                archive.actual_digest(),
                archive.manifest.payload_digest
            )));
        }
        let m = archive.manifest;
        let key = (m.name.clone(), m.version);
        if let Some(existing) = self.store.repo_entry(&m.name, &m.version) {
            if existing.manifest.payload_digest == m.payload_digest {
                return Ok(key);
            }
            return Err(CenterError::DuplicateVersionConflict {
                name: m.name,
                version: m.version,
            });
        }
        self.store
            .repository
            .entry(m.name.clone())
            .or_default()
            .insert(m.version, RepoEntry { manifest: m, zip: zip.to_vec() });
        self.store.bump();
        Ok(key)
    }

    pub fn set_desired_config(
        &mut self,
        logical_id: &str,
        app: &str,
        entries: BTreeMap<String, String>,
    ) -> Result<u64, CenterError> {
        let rec = self.station(logical_id)?;
        if app != SYSTEM_APP && !rec.desired.assignments.contains_key(app) {
            return Err(CenterError::UnassignedApp(app.into()));
        }
        let cfg = reconcile::next_config(&rec.desired, app, entries).map_err(|_| CenterError::EmptyConfigKey)?;
        let version = cfg.version;
        self.station_mut(logical_id)?.desired.configs.insert(app.into(), cfg);
        self.store.bump();
        Ok(version)
    }

    pub fn assign_package(
        &mut self,
        logical_id: &str,
        name: &str,
        version: Version,
        activation: Activation,
    ) -> Result<DesiredState, CenterError> {
        let rec = self.station(logical_id)?;
        let next = reconcile::assign(&rec.desired, &self.store, name, version, activation)?;
        self.station_mut(logical_id)?.desired = next.clone();
        self.store.bump();
        Ok(next)
    }

    pub fn actions_for(&self, logical_id: &str) -> Result<Vec<Action>, CenterError> {
        let rec = self.station(logical_id)?;
        Ok(reconcile::compute_actions(&rec.desired, rec.reported.as_ref(), &self.store))
    }

    /// Logs the event and decides. Side effects of the decision on the
    /// desired state are applied here; the decision itself depends only on
    /// the event and the station's earlier events.
    pub fn ingest_fault(&mut self, event: FaultEvent, now: SimTime) -> Result<CentralDecision, CenterError> {
        self.station(&event.station)?;
        let history: Vec<FaultEvent> = self
            .store
            .faults
            .iter()
            .filter(|r| r.event.station == event.station)
            .map(|r| r.event.clone())
            .collect();
        let decision = self.decisions.decide(&event, &history);
        let seq = self.store.faults.len() as u64 + 1;
        self.store.faults.push(FaultRecord {
            seq,
            received_at: now,
            event: event.clone(),
            decision: decision.clone(),
        });
        for d in &decision.decisions {
            match d {
                Decision::QuarantineFunction(f) => {
                    let rec = self.station_mut(&event.station)?;
                    if let Some(a) = rec.desired.assignments.get_mut(f) {
                        a.activation = Activation::Inactive;
                    }
                }
                Decision::ReprovisionStation => {
                    self.station_mut(&event.station)?.reported = None;
                }
                _ => {}
            }
        }
        self.store.bump();
        Ok(decision)
    }

    /// Operator-ordered strategy; the station applies it on receipt.
    pub fn order_strategy(&mut self, logical_id: &str, strategy: Strategy, subject: &str) -> Result<(), CenterError> {
        self.station(logical_id)?;
        self.outbox.push((
            logical_id.into(),
            Frame::Decision {
                station: logical_id.into(),
                subject: subject.into(),
                decision: CentralDecision {
                    decisions: vec![Decision::OrderStrategy(strategy)],
                    rationale: "operator order".into(),
                },
            },
        ));
        Ok(())
    }

    /// Hands a broadcast message to each target's store-and-forward buffer.
    /// Center-side delivery does not wait for broadcast results.
    pub fn post_v2i(&mut self, targets: &[String], msg: &V2iMessage) -> Result<(), CenterError> {
        for t in targets {
            self.station(t)?;
        }
        for t in targets {
            self.outbox.push((
                t.clone(),
                Frame::Actions {
                    station: t.clone(),
                    revision: self.store.revision,
                    actions: vec![],
                    archives: vec![],
                    v2i: vec![msg.clone()],
                },
            ));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.store.snapshot()
    }

    pub fn restore(&mut self, blob: &[u8]) -> Result<(), CenterError> {
        self.store = Store::restore(blob)?;
        Ok(())
    }

    pub fn liveness_of(&self, rec: &StationRecord, now: SimTime) -> Liveness {
        self.liveness.classify(rec.last_heartbeat, now)
    }

    pub fn fleet_summary(&self, now: SimTime) -> FleetSummary {
        let mut s = FleetSummary {
            stations: self.store.stations.len(),
            ..FleetSummary::default()
        };
        for rec in self.store.stations.values() {
            *s.liveness.entry(self.liveness_of(rec, now)).or_default() += 1;
            *s.regions.entry(rec.identity.region_class).or_default() += 1;
            if !reconcile::compute_actions(&rec.desired, rec.reported.as_ref(), &self.store).is_empty() {
                s.drift += 1;
            }
        }
        s.open_critical_faults = self.open_critical_faults(None);
        s
    }

    /// CRITICAL faults received after the station's last clean report.
    pub fn open_critical_faults(&self, station: Option<&str>) -> usize {
        self.store
            .faults
            .iter()
            .filter(|f| f.event.severity == Severity::Critical)
            .filter(|f| station.is_none_or(|s| f.event.station == s))
            .filter(|f| {
                self.store.stations.get(&f.event.station).is_some_and(|rec| {
                    rec.last_clean_report.is_none_or(|t| t < f.received_at)
                })
            })
            .count()
    }

    fn archives_for(&self, actions: &[Action]) -> Vec<ArchiveBlob> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Install { name, version } => self
                    .store
                    .repo_entry(name, version)
                    .map(|e| ArchiveBlob::from_bytes(name, *version, &e.zip)),
                _ => None,
            })
            .collect()
    }

    /// Queues an ACTIONS frame if the station has drifted. Returns whether
    /// one was queued.
    pub fn push_actions(&mut self, station: &str) -> Result<bool, CenterError> {
        let actions = self.actions_for(station)?;
        if actions.is_empty() {
            return Ok(false);
        }
        self.outbox.push((
            station.into(),
            Frame::Actions {
                station: station.into(),
                revision: self.store.revision,
                archives: self.archives_for(&actions),
                actions,
                v2i: vec![],
            },
        ));
        Ok(true)
    }

    fn reply_with_actions(&mut self, station: &str, now: SimTime) -> Result<(), CenterError> {
        let actions = self.actions_for(station)?;
        let frame = if actions.is_empty() {
            Frame::Heartbeat {
                station: station.into(),
                revision: self.store.revision,
                sent_at: now,
            }
        } else {
            Frame::Actions {
                station: station.into(),
                revision: self.store.revision,
                archives: self.archives_for(&actions),
                actions,
                v2i: vec![],
            }
        };
        self.outbox.push((station.into(), frame));
        Ok(())
    }

    fn record_report(&mut self, station: &str, reported: ReportedState, state: crate::agent::AgentState, now: SimTime) -> Result<(), CenterError> {
        let rec = self.station_mut(station)?;
        rec.reported = Some(reported);
        rec.agent_state = Some(state);
        rec.last_heartbeat = Some(now);
        self.store.bump();
        Ok(())
    }

    /// Processes one frame from a station. Replies land in the outbox.
    pub fn handle_frame(&mut self, frame: Frame, now: SimTime) -> Result<(), CenterError> {
        match frame {
            Frame::Hello {
                station,
                hardware_id,
                state,
                reported,
                ..
            } => {
                let rec = self.station(&station)?;
                if rec.identity.hardware_id != hardware_id {
                    let id = rec.identity.clone();
                    self.register_station(&hardware_id, &station, &id.link_profile, id.region_class)?;
                }
                self.record_report(&station, reported, state, now)?;
                self.reply_with_actions(&station, now)
            }
            Frame::Report {
                station,
                state,
                reported,
                checks,
                ..
            } => {
                let clean = checks.iter().all(|c| c.passed());
                self.record_report(&station, reported, state, now)?;
                let rec = self.station_mut(&station)?;
                rec.checks = checks;
                if clean {
                    rec.last_clean_report = Some(now);
                }
                self.reply_with_actions(&station, now)
            }
            Frame::Fault { event, .. } => {
                let station = event.station.clone();
                let subject = event.subject.clone();
                let decision = self.ingest_fault(event, now)?;
                self.outbox.push((
                    station.clone(),
                    Frame::Decision {
                        station,
                        subject,
                        decision,
                    },
                ));
                Ok(())
            }
            Frame::Pong { .. } | Frame::Ping { .. } | Frame::Heartbeat { .. } | Frame::Actions { .. } | Frame::Decision { .. } => Ok(()),
        }
    }
}
