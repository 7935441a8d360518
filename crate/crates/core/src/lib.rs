//! Allocation-only building blocks for managing a fleet of roadside stations.
//!
//! Everything in this crate is a pure value type or a deterministic state
//! machine over a virtual clock. IO, archives, wire framing and the CLI live
//! in the `irs-mgmt` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backoff;
pub mod balancer;
pub mod checks;
pub mod clock;
pub mod decision;
pub mod fleet;
pub mod framework;
pub mod ladder;
pub mod ledger;
pub mod link;
pub mod logs;
pub mod model;
pub mod reconcile;
pub mod sfbuffer;
pub mod shaping;
pub mod state;
pub mod time;
pub mod version;

pub use model::{
    builtin_link_profiles, validate_manifest, ConfigSet, Dependency, FaultEvent, FaultLayer,
    LinkProfile, ManifestError, PackageManifest, PackageType, RawManifest, RegionClass,
    ResourceQuota, Severity, StationIdentity, V2iMessage,
};
pub use state::{Action, Activation, Assignment, DesiredState, FunctionHealth, ReportedState};
pub use time::SimTime;
pub use version::Version;
