//! The center's single logical store and its snapshot format.

use std::collections::BTreeMap;
use std::time::Duration;

use irs_core::checks::LocalCheckResult;
use irs_core::decision::CentralDecision;
use irs_core::reconcile::PackageCatalog;
use irs_core::{DesiredState, FaultEvent, PackageManifest, ReportedState, SimTime, StationIdentity, Version};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Liveness {
    Online,
    Suspect,
    Offline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessPolicy {
    pub heartbeat_interval: Duration,
    pub suspect_multiplier: u32,
    pub offline_multiplier: u32,
}

impl Default for LivenessPolicy {
    fn default() -> Self {
        LivenessPolicy {
            heartbeat_interval: Duration::from_secs(10),
            suspect_multiplier: 2,
            offline_multiplier: 6,
        }
    }
}

impl LivenessPolicy {
    pub fn classify(&self, last_heartbeat: Option<SimTime>, now: SimTime) -> Liveness {
        let Some(last) = last_heartbeat else {
            return Liveness::Offline;
        };
        let age = now.since(last);
        if age <= self.heartbeat_interval * self.suspect_multiplier {
            Liveness::Online
        } else if age <= self.heartbeat_interval * self.offline_multiplier {
            Liveness::Suspect
        } else {
            Liveness::Offline
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationRecord {
    pub identity: StationIdentity,
    pub desired: DesiredState,
    /// `None` until the station reports, and again after a hardware swap.
    pub reported: Option<ReportedState>,
    pub last_heartbeat: Option<SimTime>,
    #[serde(default)]
    pub agent_state: Option<AgentState>,
    #[serde(default)]
    pub checks: Vec<LocalCheckResult>,
    /// Last report in which every local check passed.
    #[serde(default)]
    pub last_clean_report: Option<SimTime>,
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub manifest: PackageManifest,
    #[serde(with = "b64")]
    pub zip: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub seq: u64,
    pub received_at: SimTime,
    pub event: FaultEvent,
    pub decision: CentralDecision,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Store {
    pub revision: u64,
    pub stations: BTreeMap<String, StationRecord>,
    /// hardware_id -> logical_id
    pub hardware: BTreeMap<String, String>,
    pub repository: BTreeMap<String, BTreeMap<Version, RepoEntry>>,
    pub faults: Vec<FaultRecord>,
}

impl PackageCatalog for Store {
    fn manifest(&self, name: &str, version: &Version) -> Option<&PackageManifest> {
        self.repository.get(name)?.get(version).map(|e| &e.manifest)
    }

    fn newest_at_least(&self, name: &str, min: &Version) -> Option<Version> {
        self.repository
            .get(name)?
            .range(min..)
            .next_back()
            .map(|(v, _)| *v)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("snapshot digest does not match its contents")]
    CorruptSnapshot,
}

impl Store {
    pub fn bump(&mut self) -> u64 {
        self.revision += 1;
        self.revision
    }

    pub fn package_count(&self) -> usize {
        self.repository.values().map(BTreeMap::len).sum()
    }

    pub fn repo_entry(&self, name: &str, version: &Version) -> Option<&RepoEntry> {
        self.repository.get(name)?.get(version)
    }

    /// JSON document, a newline, and the hex SHA-256 of the document.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut doc = serde_json::to_vec(self).expect("store serializes");
        let digest = hex::encode(Sha256::digest(&doc));
        doc.push(b'\n');
        doc.extend_from_slice(digest.as_bytes());
        doc.push(b'\n');
        doc
    }

    pub fn restore(blob: &[u8]) -> Result<Store, SnapshotError> {
        let text = std::str::from_utf8(blob).map_err(|_| SnapshotError::CorruptSnapshot)?;
        let text = text.strip_suffix('\n').unwrap_or(text);
        let (doc, digest) = text.rsplit_once('\n').ok_or(SnapshotError::CorruptSnapshot)?;
        if hex::encode(Sha256::digest(doc.as_bytes())) != digest {
            return Err(SnapshotError::CorruptSnapshot);
        }
        serde_json::from_str(doc).map_err(|_| SnapshotError::CorruptSnapshot)
    }
}
