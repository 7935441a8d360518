//! Shared domain types and the manifest validator.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;
use crate::version::Version;

/// The four test-area classes a station can be deployed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegionClass {
    HighwayDense,
    HighwaySparse,
    Rural,
    Urban,
}

impl RegionClass {
    pub const ALL: [RegionClass; 4] = [
        RegionClass::HighwayDense,
        RegionClass::HighwaySparse,
        RegionClass::Rural,
        RegionClass::Urban,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionClass::HighwayDense => "HIGHWAY_DENSE",
            RegionClass::HighwaySparse => "HIGHWAY_SPARSE",
            RegionClass::Rural => "RURAL",
            RegionClass::Urban => "URBAN",
        }
    }
}

/// Logical identity of one roadside station and its current hardware binding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationIdentity {
    pub logical_id: String,
    pub hardware_id: String,
    pub link_profile: String,
    pub region_class: RegionClass,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinkProfileError {
    #[error("link profile `{0}` must have bandwidth > 0")]
    ZeroBandwidth(String),
    #[error("link profile `{0}` loss rate must lie in [0, 1)")]
    LossRate(String),
}

/// Access technology toward the center, reduced to bandwidth, delay and loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub name: String,
    /// Bytes per second.
    pub bandwidth: u64,
    /// One-way delay in milliseconds.
    pub delay_ms: u64,
    pub loss_rate: f64,
}

impl LinkProfile {
    pub fn new(
        name: impl Into<String>,
        bandwidth: u64,
        delay_ms: u64,
        loss_rate: f64,
    ) -> Result<Self, LinkProfileError> {
        let p = LinkProfile {
            name: name.into(),
            bandwidth,
            delay_ms,
            loss_rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LinkProfileError> {
        if self.bandwidth == 0 {
            return Err(LinkProfileError::ZeroBandwidth(self.name.clone()));
        }
        // NaN fails both comparisons.
        if !(self.loss_rate >= 0.0 && self.loss_rate < 1.0) {
            return Err(LinkProfileError::LossRate(self.name.clone()));
        }
        Ok(())
    }

    pub fn delay(&self) -> Duration {
        Duration::from_millis(self.delay_ms)
    }
}

/// FIBER, XDSL, UMTS and GPRS with fixed defaults.
pub fn builtin_link_profiles() -> Vec<LinkProfile> {
    vec![
        LinkProfile {
            name: "FIBER".into(),
            bandwidth: 10_000_000,
            delay_ms: 2,
            loss_rate: 0.0001,
        },
        LinkProfile {
            name: "XDSL".into(),
            bandwidth: 250_000,
            delay_ms: 20,
            loss_rate: 0.001,
        },
        LinkProfile {
            name: "UMTS".into(),
            bandwidth: 40_000,
            delay_ms: 80,
            loss_rate: 0.005,
        },
        LinkProfile {
            name: "GPRS".into(),
            bandwidth: 2_000,
            delay_ms: 300,
            loss_rate: 0.02,
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PackageType {
    System,
    Function,
    Management,
}

impl PackageType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "SYSTEM" => Some(PackageType::System),
            "FUNCTION" => Some(PackageType::Function),
            "MANAGEMENT" => Some(PackageType::Management),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PackageType::System => "SYSTEM",
            PackageType::Function => "FUNCTION",
            PackageType::Management => "MANAGEMENT",
        }
    }
}

/// `(name, minimum version)`; serialized as a two-element array.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(String, Version)", into = "(String, Version)")]
pub struct Dependency {
    pub name: String,
    pub min_version: Version,
}

impl From<(String, Version)> for Dependency {
    fn from((name, min_version): (String, Version)) -> Self {
        Dependency { name, min_version }
    }
}

impl From<Dependency> for (String, Version) {
    fn from(d: Dependency) -> Self {
        (d.name, d.min_version)
    }
}

/// Per-function resource limits. Zero on a dimension means no access.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceQuota {
    /// Permille of one CPU core.
    pub cpu_share: u64,
    pub ram: u64,
    pub disk: u64,
    /// Bytes per second toward the center.
    pub bandwidth_up: u64,
    /// Bytes per second on the broadcast channel.
    pub bandwidth_v2i: u64,
}

pub const MANAGEMENT_PRIORITY: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageManifest {
    pub name: String,
    pub version: Version,
    pub pkg_type: PackageType,
    #[serde(default)]
    pub depends: Vec<Dependency>,
    pub priority: u8,
    pub quota: ResourceQuota,
    pub payload_digest: String,
}

impl PackageManifest {
    pub fn to_raw(&self) -> RawManifest {
        RawManifest {
            name: Some(self.name.clone()),
            version: Some(alloc::format!("{}", self.version)),
            pkg_type: Some(self.pkg_type.as_str().into()),
            depends: Some(
                self.depends
                    .iter()
                    .map(|d| (d.name.clone(), alloc::format!("{}", d.min_version)))
                    .collect(),
            ),
            priority: Some(i64::from(self.priority)),
            quota: Some(self.quota),
            payload_digest: Some(self.payload_digest.clone()),
        }
    }
}

/// A manifest document as read from `manifest.json`, before validation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, alias = "type", skip_serializing_if = "Option::is_none")]
    pub pkg_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota: Option<ResourceQuota>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("manifest invariant violated: {0}")]
    InvariantViolation(String),
}

/// Checks a raw manifest document and converts it into a [`PackageManifest`].
///
/// Syntax of the fields that are present is checked first, then the
/// invariants that those fields already decide (management priority,
/// self-dependency, priority range), and only then completeness. A document
/// that is both incomplete and contradictory reports the contradiction.
pub fn validate_manifest(raw: &RawManifest) -> Result<PackageManifest, ManifestError> {
    use ManifestError::{InvariantViolation, Malformed};

    let version = raw
        .version
        .as_deref()
        .map(|v| v.parse::<Version>().map_err(|e| Malformed(alloc::format!("{e}"))))
        .transpose()?;
    let pkg_type = raw
        .pkg_type
        .as_deref()
        .map(|t| {
            PackageType::parse(t).ok_or_else(|| Malformed(alloc::format!("unknown type `{t}`")))
        })
        .transpose()?;
    let depends = raw
        .depends
        .as_ref()
        .map(|deps| {
            deps.iter()
                .map(|(n, v)| {
                    if n.is_empty() {
                        return Err(Malformed("dependency with empty name".into()));
                    }
                    let min_version = v
                        .parse::<Version>()
                        .map_err(|e| Malformed(alloc::format!("dependency `{n}`: {e}")))?;
                    Ok(Dependency {
                        name: n.clone(),
                        min_version,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    if let Some(digest) = raw.payload_digest.as_deref() {
        if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Malformed("payload_digest must be 64 hex characters".into()));
        }
    }

    if let Some(p) = raw.priority {
        if !(0..=255).contains(&p) {
            return Err(InvariantViolation(alloc::format!(
                "priority {p} outside 0..=255"
            )));
        }
    }
    if pkg_type == Some(PackageType::Management) {
        if let Some(p) = raw.priority {
            if p != i64::from(MANAGEMENT_PRIORITY) {
                return Err(InvariantViolation(alloc::format!(
                    "MANAGEMENT package must have priority 255, got {p}"
                )));
            }
        }
    }
    if let (Some(name), Some(deps)) = (raw.name.as_deref(), depends.as_ref()) {
        if deps.iter().any(|d| d.name == name) {
            return Err(InvariantViolation(alloc::format!(
                "self-dependency on `{name}`"
            )));
        }
    }

    let missing = |f: &str| Malformed(alloc::format!("missing field `{f}`"));
    let name = raw.name.clone().ok_or_else(|| missing("name"))?;
    if name.is_empty() {
        return Err(Malformed("empty name".into()));
    }
    Ok(PackageManifest {
        name,
        version: version.ok_or_else(|| missing("version"))?,
        pkg_type: pkg_type.ok_or_else(|| missing("pkg_type"))?,
        depends: depends.ok_or_else(|| missing("depends"))?,
        priority: raw.priority.ok_or_else(|| missing("priority"))? as u8,
        quota: raw.quota.ok_or_else(|| missing("quota"))?,
        payload_digest: raw
            .payload_digest
            .as_deref()
            .ok_or_else(|| missing("payload_digest"))?
            .to_ascii_lowercase(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config key must be non-empty")]
pub struct EmptyConfigKey;

/// Versioned key-value configuration of one application on one station.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSet {
    pub app_name: String,
    pub version: u64,
    pub entries: BTreeMap<String, String>,
}

impl ConfigSet {
    pub fn new(
        app_name: impl Into<String>,
        version: u64,
        entries: BTreeMap<String, String>,
    ) -> Result<Self, EmptyConfigKey> {
        if entries.keys().any(|k| k.is_empty()) {
            return Err(EmptyConfigKey);
        }
        Ok(ConfigSet {
            app_name: app_name.into(),
            version,
            entries,
        })
    }
}

/// Reserved application name for station-wide configuration.
pub const SYSTEM_APP: &str = "system";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultLayer {
    Os,
    Framework,
    Function,
    Network,
    DataCollection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Info,
    Warning,
    Error,
    Critical,
}

/// A classified fault observation reported by a station.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub station: String,
    pub layer: FaultLayer,
    pub severity: Severity,
    pub subject: String,
    pub occurred_at: SimTime,
    pub detail: String,
    /// Set when the station's local strategy ladder has run out of rungs.
    #[serde(default)]
    pub ladder_exhausted: bool,
}

impl FaultEvent {
    pub fn new(
        station: impl Into<String>,
        layer: FaultLayer,
        severity: Severity,
        subject: impl Into<String>,
        occurred_at: SimTime,
        detail: impl Into<String>,
    ) -> Self {
        FaultEvent {
            station: station.into(),
            layer,
            severity,
            subject: subject.into(),
            occurred_at,
            detail: detail.into(),
            ladder_exhausted: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgType {
    CamLike,
    DenmLike,
    Service,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Center,
    Vehicle,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum V2iMessageError {
    #[error("message size must be > 0")]
    EmptyMessage,
    #[error("redundancy must be >= 1")]
    ZeroRedundancy,
    #[error("expiry must lie strictly after creation")]
    ExpiryNotAfterCreation,
}

/// Broadcast payload held in a station's store-and-forward buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct V2iMessage {
    pub msg_id: u64,
    pub msg_type: MsgType,
    pub priority: u8,
    pub size: u32,
    pub created_at: SimTime,
    pub expiry: SimTime,
    /// Required number of broadcasts.
    pub redundancy: u32,
    pub origin: Origin,
}

impl V2iMessage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        msg_id: u64,
        msg_type: MsgType,
        priority: u8,
        size: u32,
        created_at: SimTime,
        expiry: SimTime,
        redundancy: u32,
        origin: Origin,
    ) -> Result<Self, V2iMessageError> {
        let m = V2iMessage {
            msg_id,
            msg_type,
            priority,
            size,
            created_at,
            expiry,
            redundancy,
            origin,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), V2iMessageError> {
        if self.size == 0 {
            return Err(V2iMessageError::EmptyMessage);
        }
        if self.redundancy == 0 {
            return Err(V2iMessageError::ZeroRedundancy);
        }
        if self.expiry <= self.created_at {
            return Err(V2iMessageError::ExpiryNotAfterCreation);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

    fn tls_demo() -> RawManifest {
        RawManifest {
            name: Some("tls-demo".into()),
            version: Some("1.0.0".into()),
            pkg_type: Some("FUNCTION".into()),
            depends: Some(vec![]),
            priority: Some(100),
            quota: Some(ResourceQuota {
                cpu_share: 100,
                ram: 1 << 20,
                disk: 1 << 20,
                bandwidth_up: 500,
                bandwidth_v2i: 500,
            }),
            payload_digest: Some(DIGEST.into()),
        }
    }

    #[test]
    fn minimal_function_manifest_is_valid() {
        let m = validate_manifest(&tls_demo()).unwrap();
        assert_eq!(m.name, "tls-demo");
        assert_eq!(m.version, Version::new(1, 0, 0));
        assert_eq!(m.pkg_type, PackageType::Function);
        assert_eq!(m.priority, 100);
    }

    #[test]
    fn management_priority_must_be_255() {
        let raw = RawManifest {
            name: Some("fm-agent".into()),
            pkg_type: Some("MANAGEMENT".into()),
            priority: Some(10),
            ..Default::default()
        };
        assert!(matches!(
            validate_manifest(&raw),
            Err(ManifestError::InvariantViolation(_))
        ));
    }

    #[test]
    fn self_dependency_rejected() {
        let raw = RawManifest {
            name: Some("a".into()),
            depends: Some(vec![("a".into(), "1.0.0".into())]),
            ..Default::default()
        };
        match validate_manifest(&raw) {
            Err(ManifestError::InvariantViolation(msg)) => assert!(msg.contains("self")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_and_bad_version_are_malformed() {
        let mut raw = tls_demo();
        raw.quota = None;
        assert!(matches!(validate_manifest(&raw), Err(ManifestError::Malformed(_))));
        let mut raw = tls_demo();
        raw.version = Some("1.0".into());
        assert!(matches!(validate_manifest(&raw), Err(ManifestError::Malformed(_))));
        let mut raw = tls_demo();
        raw.pkg_type = Some("PLUGIN".into());
        assert!(matches!(validate_manifest(&raw), Err(ManifestError::Malformed(_))));
    }

    #[test]
    fn priority_out_of_range() {
        let mut raw = tls_demo();
        raw.priority = Some(256);
        assert!(matches!(
            validate_manifest(&raw),
            Err(ManifestError::InvariantViolation(_))
        ));
    }

    #[test]
    fn builtin_profiles() {
        let profiles = builtin_link_profiles();
        let names: Vec<&str> = profiles.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["FIBER", "XDSL", "UMTS", "GPRS"]);
        assert_eq!(profiles[0].bandwidth, 10_000_000);
        assert_eq!(profiles[3].bandwidth, 2_000);
        for p in &profiles {
            p.validate().unwrap();
            assert!(p.loss_rate >= 0.0 && p.loss_rate < 1.0);
        }
    }

    #[test]
    fn link_profile_invariants() {
        assert!(LinkProfile::new("x", 0, 1, 0.0).is_err());
        assert!(LinkProfile::new("x", 1, 1, 1.0).is_err());
        assert!(LinkProfile::new("x", 1, 1, f64::NAN).is_err());
        assert!(LinkProfile::new("x", 1, 0, 0.0).is_ok());
    }

    #[test]
    fn v2i_message_invariants() {
        let ok = V2iMessage::new(
            1,
            MsgType::DenmLike,
            10,
            100,
            SimTime::ZERO,
            SimTime::from_secs(1),
            1,
            Origin::Center,
        );
        assert!(ok.is_ok());
        let bad = V2iMessage::new(
            1,
            MsgType::DenmLike,
            10,
            100,
            SimTime::from_secs(1),
            SimTime::from_secs(1),
            1,
            Origin::Center,
        );
        assert_eq!(bad, Err(V2iMessageError::ExpiryNotAfterCreation));
    }

    fn arb_manifest() -> impl Strategy<Value = PackageManifest> {
        (
            "[a-z]{1,8}",
            any::<(u8, u8, u8)>(),
            prop_oneof![
                Just(PackageType::System),
                Just(PackageType::Function),
                Just(PackageType::Management)
            ],
            proptest::collection::vec(("[a-z]{1,8}", any::<(u8, u8, u8)>()), 0..4),
            any::<u8>(),
            any::<(u32, u32, u32)>(),
        )
            .prop_map(|(name, v, ty, deps, prio, q)| PackageManifest {
                depends: deps
                    .into_iter()
                    .filter(|(n, _)| *n != name)
                    .map(|(n, v)| Dependency {
                        name: n,
                        min_version: Version::new(v.0.into(), v.1.into(), v.2.into()),
                    })
                    .collect(),
                name,
                version: Version::new(v.0.into(), v.1.into(), v.2.into()),
                pkg_type: ty,
                priority: if ty == PackageType::Management { 255 } else { prio },
                quota: ResourceQuota {
                    cpu_share: q.0.into(),
                    ram: q.1.into(),
                    disk: q.2.into(),
                    bandwidth_up: 0,
                    bandwidth_v2i: 0,
                },
                payload_digest: DIGEST.into(),
            })
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(m in arb_manifest()) {
            let once = validate_manifest(&m.to_raw()).unwrap();
            prop_assert_eq!(&once, &m);
            let twice = validate_manifest(&once.to_raw()).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
