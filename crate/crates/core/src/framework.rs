//! In-process function host: bundle-style lifecycle, service registry, and
//! the separate management framework that survives function-side failures.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{PackageManifest, PackageType, ResourceQuota};
use crate::version::Version;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FunctionState {
    Installed,
    Resolved,
    Active,
    Stopped,
    Faulted,
}

impl FunctionState {
    pub fn can_transition(self, to: FunctionState) -> bool {
        use FunctionState::*;
        matches!(
            (self, to),
            (Installed, Resolved)
                | (Resolved, Active)
                | (Active, Stopped)
                | (Stopped, Active)
                | (Faulted, Resolved)
        ) || (to == Faulted && self != Faulted)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionHandle {
    pub name: String,
    pub version: Version,
    pub kind: PackageType,
    pub state: FunctionState,
    pub priority: u8,
    pub quota: ResourceQuota,
}

/// Service interfaces a function offers and consumes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDecl {
    #[serde(default)]
    pub provides: Vec<String>,
    #[serde(default)]
    pub requires: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameworkError {
    #[error("function `{0}` is already registered")]
    DuplicateName(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("illegal transition {from:?} -> {to:?} for `{name}`")]
    IllegalTransition {
        name: String,
        from: FunctionState,
        to: FunctionState,
    },
    #[error("`{name}` requires service `{service}` that nobody provides")]
    Unresolved { name: String, service: String },
    #[error("function framework is not running")]
    FrameworkDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameworkStatus {
    Running,
    Faulted,
    Stopped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    handle: FunctionHandle,
    services: ServiceDecl,
}

/// Interface name → providers in lookup order (priority desc, name asc).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRegistry {
    providers: BTreeMap<String, Vec<(u8, String)>>,
}

impl ServiceRegistry {
    fn publish(&mut self, interface: &str, priority: u8, name: &str) {
        let list = self.providers.entry(interface.into()).or_default();
        if list.iter().any(|(_, n)| n == name) {
            return;
        }
        list.push((priority, name.into()));
        list.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    }

    fn withdraw(&mut self, name: &str) {
        for list in self.providers.values_mut() {
            list.retain(|(_, n)| n != name);
        }
        self.providers.retain(|_, l| !l.is_empty());
    }

    pub fn providers(&self, interface: &str) -> impl Iterator<Item = &str> {
        self.providers
            .get(interface)
            .into_iter()
            .flatten()
            .map(|(_, n)| n.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionFramework {
    status: FrameworkStatus,
    functions: BTreeMap<String, Entry>,
    registry: ServiceRegistry,
}

impl Default for FunctionFramework {
    fn default() -> Self {
        FunctionFramework {
            status: FrameworkStatus::Running,
            functions: BTreeMap::new(),
            registry: ServiceRegistry::default(),
        }
    }
}

impl FunctionFramework {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn status(&self) -> FrameworkStatus {
        self.status
    }

    pub fn register_function(
        &mut self,
        manifest: &PackageManifest,
        services: ServiceDecl,
    ) -> Result<FunctionHandle, FrameworkError> {
        if self.functions.contains_key(&manifest.name) {
            return Err(FrameworkError::DuplicateName(manifest.name.clone()));
        }
        let handle = FunctionHandle {
            name: manifest.name.clone(),
            version: manifest.version,
            kind: manifest.pkg_type,
            state: FunctionState::Installed,
            priority: manifest.priority,
            quota: manifest.quota,
        };
        self.functions.insert(
            manifest.name.clone(),
            Entry {
                handle: handle.clone(),
                services,
            },
        );
        Ok(handle)
    }

    pub fn unregister(&mut self, name: &str) -> Option<FunctionHandle> {
        let e = self.functions.remove(name)?;
        self.registry.withdraw(name);
        Some(e.handle)
    }

    pub fn handle(&self, name: &str) -> Option<&FunctionHandle> {
        self.functions.get(name).map(|e| &e.handle)
    }

    pub fn handles(&self) -> impl Iterator<Item = &FunctionHandle> {
        self.functions.values().map(|e| &e.handle)
    }

    /// INSTALLED (or FAULTED) → RESOLVED once every required service has a
    /// registered, non-faulted provider.
    pub fn resolve(&mut self, name: &str) -> Result<FunctionState, FrameworkError> {
        let entry = self
            .functions
            .get(name)
            .ok_or_else(|| FrameworkError::UnknownFunction(name.into()))?;
        for service in &entry.services.requires {
            let provided = self.functions.iter().any(|(n, e)| {
                n != name
                    && e.handle.state != FunctionState::Faulted
                    && e.services.provides.iter().any(|p| p == service)
            });
            if !provided {
                return Err(FrameworkError::Unresolved {
                    name: name.into(),
                    service: service.clone(),
                });
            }
        }
        self.set_state(name, FunctionState::Resolved)
    }

    /// Moves `name` along a legal edge. Entering ACTIVE publishes its
    /// services; leaving ACTIVE withdraws them in the same step.
    pub fn set_state(
        &mut self,
        name: &str,
        target: FunctionState,
    ) -> Result<FunctionState, FrameworkError> {
        if target == FunctionState::Active && self.status != FrameworkStatus::Running {
            return Err(FrameworkError::FrameworkDown);
        }
        let entry = self
            .functions
            .get_mut(name)
            .ok_or_else(|| FrameworkError::UnknownFunction(name.into()))?;
        let from = entry.handle.state;
        if !from.can_transition(target) {
            return Err(FrameworkError::IllegalTransition {
                name: name.into(),
                from,
                to: target,
            });
        }
        entry.handle.state = target;
        if target == FunctionState::Active {
            let prio = entry.handle.priority;
            let provides = entry.services.provides.clone();
            for iface in provides {
                self.registry.publish(&iface, prio, name);
            }
        } else if from == FunctionState::Active {
            self.registry.withdraw(name);
        }
        Ok(target)
    }

    /// Highest-priority ACTIVE provider of `interface`.
    pub fn lookup_service(&self, interface: &str) -> Option<&str> {
        self.registry.providers(interface).find(|n| {
            self.functions
                .get(*n)
                .is_some_and(|e| e.handle.state == FunctionState::Active)
        })
    }

    /// Marks the framework itself faulted; every function is withdrawn.
    pub fn fault(&mut self) {
        self.status = FrameworkStatus::Faulted;
        let names: Vec<String> = self.functions.keys().cloned().collect();
        for n in names {
            let _ = self.set_state(&n, FunctionState::Faulted);
        }
    }

    /// Brings the framework back and re-activates `to_activate` in order.
    /// Returns the functions that failed to come back.
    pub fn restart(&mut self, to_activate: &[String]) -> BTreeSet<String> {
        self.status = FrameworkStatus::Running;
        let names: Vec<String> = self.functions.keys().cloned().collect();
        for n in &names {
            let state = self.functions[n].handle.state;
            match state {
                FunctionState::Active => {
                    let _ = self.set_state(n, FunctionState::Stopped);
                }
                FunctionState::Faulted => {
                    let _ = self.set_state(n, FunctionState::Resolved);
                }
                FunctionState::Installed => {
                    let _ = self.resolve(n);
                }
                _ => {}
            }
        }
        let mut failed = BTreeSet::new();
        for n in to_activate {
            if self.set_state(n, FunctionState::Active).is_err() {
                failed.insert(n.clone());
            }
        }
        failed
    }
}

/// Host for management components. It shares nothing with
/// [`FunctionFramework`]; only a station-level (OS) failure stops it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagementFramework {
    running: bool,
}

impl Default for ManagementFramework {
    fn default() -> Self {
        ManagementFramework { running: true }
    }
}

impl ManagementFramework {
    pub fn is_alive(&self) -> bool {
        self.running
    }

    pub fn halt(&mut self) {
        self.running = false;
    }

    pub fn start(&mut self) {
        self.running = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn manifest(name: &str, priority: u8) -> PackageManifest {
        PackageManifest {
            name: name.into(),
            version: Version::new(1, 0, 0),
            pkg_type: PackageType::Function,
            depends: vec![],
            priority,
            quota: ResourceQuota::default(),
            payload_digest: "00".repeat(32),
        }
    }

    fn provides(s: &str) -> ServiceDecl {
        ServiceDecl { provides: vec![s.into()], requires: vec![] }
    }

    fn activate(fw: &mut FunctionFramework, name: &str) {
        fw.resolve(name).unwrap();
        fw.set_state(name, FunctionState::Active).unwrap();
    }

    #[test]
    fn register_and_duplicate() {
        let mut fw = FunctionFramework::new();
        let h = fw.register_function(&manifest("f", 1), ServiceDecl::default()).unwrap();
        assert_eq!(h.state, FunctionState::Installed);
        assert_eq!(
            fw.register_function(&manifest("f", 1), ServiceDecl::default()),
            Err(FrameworkError::DuplicateName("f".into()))
        );
    }

    #[test]
    fn resolve_checks_required_services() {
        let mut fw = FunctionFramework::new();
        fw.register_function(&manifest("a", 1), ServiceDecl { provides: vec![], requires: vec!["tls".into()] }).unwrap();
        assert!(matches!(fw.resolve("a"), Err(FrameworkError::Unresolved { .. })));
        fw.register_function(&manifest("b", 1), provides("tls")).unwrap();
        assert_eq!(fw.resolve("a"), Ok(FunctionState::Resolved));
    }

    #[test]
    fn installed_cannot_jump_to_active() {
        let mut fw = FunctionFramework::new();
        fw.register_function(&manifest("f", 1), ServiceDecl::default()).unwrap();
        assert!(matches!(
            fw.set_state("f", FunctionState::Active),
            Err(FrameworkError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn lookup_prefers_priority_and_skips_faulted() {
        let mut fw = FunctionFramework::new();
        fw.register_function(&manifest("p", 200), provides("geo")).unwrap();
        fw.register_function(&manifest("q", 100), provides("geo")).unwrap();
        assert_eq!(fw.lookup_service("geo"), None);
        activate(&mut fw, "q");
        assert_eq!(fw.lookup_service("geo"), Some("q"));
        activate(&mut fw, "p");
        assert_eq!(fw.lookup_service("geo"), Some("p"));
        fw.set_state("p", FunctionState::Faulted).unwrap();
        assert_eq!(fw.lookup_service("geo"), Some("q"));
        assert_eq!(fw.registry.providers("geo").collect::<Vec<_>>(), ["q"]);
    }

    #[test]
    fn equal_priority_ties_by_name() {
        let mut fw = FunctionFramework::new();
        fw.register_function(&manifest("zeta", 5), provides("x")).unwrap();
        fw.register_function(&manifest("alpha", 5), provides("x")).unwrap();
        activate(&mut fw, "zeta");
        activate(&mut fw, "alpha");
        assert_eq!(fw.lookup_service("x"), Some("alpha"));
    }

    #[test]
    fn management_outlives_function_framework() {
        let mut fw = FunctionFramework::new();
        let mgmt = ManagementFramework::default();
        assert!(mgmt.is_alive());
        fw.register_function(&manifest("f", 1), provides("x")).unwrap();
        activate(&mut fw, "f");
        fw.fault();
        assert_eq!(fw.status(), FrameworkStatus::Faulted);
        assert_eq!(fw.lookup_service("x"), None);
        assert!(mgmt.is_alive());
        assert_eq!(fw.set_state("f", FunctionState::Resolved), Ok(FunctionState::Resolved));
        assert_eq!(fw.set_state("f", FunctionState::Active), Err(FrameworkError::FrameworkDown));
        assert!(fw.restart(&["f".into()]).is_empty());
        assert_eq!(fw.lookup_service("x"), Some("f"));
    }

    proptest! {
        #[test]
        fn lookup_never_returns_inactive(ops in proptest::collection::vec((0usize..4, 0usize..5), 0..60)) {
            let states = [FunctionState::Installed, FunctionState::Resolved, FunctionState::Active, FunctionState::Stopped, FunctionState::Faulted];
            let mut fw = FunctionFramework::new();
            for (i, n) in ["a", "b", "c", "d"].iter().enumerate() {
                fw.register_function(&manifest(n, (i * 40) as u8), provides("svc")).unwrap();
            }
            for (f, s) in ops {
                let name = ["a", "b", "c", "d"][f];
                let before = fw.handle(name).unwrap().state;
                let r = fw.set_state(name, states[s]);
                prop_assert_eq!(r.is_ok(), before.can_transition(states[s]));
                if let Some(p) = fw.lookup_service("svc") {
                    prop_assert_eq!(fw.handle(p).unwrap().state, FunctionState::Active);
                }
                for p in fw.registry.providers("svc") {
                    prop_assert_eq!(fw.handle(p).unwrap().state, FunctionState::Active);
                }
            }
        }
    }
}
