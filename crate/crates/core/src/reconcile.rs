//! Dependency closure for assignments and the desired/reported diff planner.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{ConfigSet, PackageManifest};
use crate::state::{Action, Activation, Assignment, DesiredState, FunctionHealth, ReportedState};
use crate::version::Version;

/// Read access to a package repository.
pub trait PackageCatalog {
    fn manifest(&self, name: &str, version: &Version) -> Option<&PackageManifest>;

    /// Newest version of `name` that is `>= min`.
    fn newest_at_least(&self, name: &str, min: &Version) -> Option<Version>;
}

/// In-memory catalog keyed by name then version.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    packages: BTreeMap<String, BTreeMap<Version, PackageManifest>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, manifest: PackageManifest) {
        self.packages
            .entry(manifest.name.clone())
            .or_default()
            .insert(manifest.version, manifest);
    }

    pub fn len(&self) -> usize {
        self.packages.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromIterator<PackageManifest> for Catalog {
    fn from_iter<I: IntoIterator<Item = PackageManifest>>(iter: I) -> Self {
        let mut c = Catalog::new();
        for m in iter {
            c.insert(m);
        }
        c
    }
}

impl PackageCatalog for Catalog {
    fn manifest(&self, name: &str, version: &Version) -> Option<&PackageManifest> {
        self.packages.get(name)?.get(version)
    }

    fn newest_at_least(&self, name: &str, min: &Version) -> Option<Version> {
        self.packages
            .get(name)?
            .range(min..)
            .next_back()
            .map(|(v, _)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssignError {
    #[error("package {name} {version} is not in the repository")]
    UnknownPackage { name: String, version: Version },
    #[error("dependency `{0}` cannot be satisfied from the repository")]
    DependencyUnsatisfiable(String),
}

/// Records `name@version` in `desired`, then restores the dependency
/// closure of every ACTIVE assignment: unassigned dependencies get the
/// newest satisfying version, assigned ones below the minimum are raised to
/// it, and every member of a closure is marked ACTIVE. An INACTIVE
/// assignment of a package that is not needed by anything active pulls
/// nothing in.
///
/// `desired` is untouched on error.
pub fn assign<C: PackageCatalog>(
    desired: &DesiredState,
    catalog: &C,
    name: &str,
    version: Version,
    activation: Activation,
) -> Result<DesiredState, AssignError> {
    if catalog.manifest(name, &version).is_none() {
        return Err(AssignError::UnknownPackage {
            name: name.into(),
            version,
        });
    }
    let mut next = desired.clone();
    next.assignments.insert(
        name.into(),
        Assignment {
            version,
            activation,
        },
    );

    let mut stack: Vec<(String, Version)> = next
        .assignments
        .iter()
        .filter(|(_, a)| a.activation == Activation::Active)
        .map(|(n, a)| (n.clone(), a.version))
        .collect();
    let mut seen: BTreeSet<(String, Version)> = BTreeSet::new();
    while let Some((pkg, ver)) = stack.pop() {
        if !seen.insert((pkg.clone(), ver)) {
            continue;
        }
        let manifest = catalog
            .manifest(&pkg, &ver)
            .ok_or_else(|| AssignError::DependencyUnsatisfiable(pkg.clone()))?;
        for dep in &manifest.depends {
            let chosen = match next.assignments.get(&dep.name) {
                Some(a) if a.version >= dep.min_version => a.version,
                _ => catalog
                    .newest_at_least(&dep.name, &dep.min_version)
                    .ok_or_else(|| AssignError::DependencyUnsatisfiable(dep.name.clone()))?,
            };
            next.assignments.insert(
                dep.name.clone(),
                Assignment {
                    version: chosen,
                    activation: Activation::Active,
                },
            );
            stack.push((dep.name.clone(), chosen));
        }
    }
    Ok(next)
}

/// Orders `names` so that every package comes after its in-set dependencies;
/// among ready packages the smallest name goes first. Members of a
/// dependency cycle are appended in name order.
fn dependency_order<C: PackageCatalog>(
    names: &BTreeSet<String>,
    desired: &DesiredState,
    catalog: &C,
) -> Vec<String> {
    let mut pending_deps: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for n in names {
        let deps = desired
            .assignments
            .get(n)
            .and_then(|a| catalog.manifest(n, &a.version))
            .map(|m| {
                m.depends
                    .iter()
                    .map(|d| d.name.as_str())
                    .filter(|d| names.contains(*d) && *d != n.as_str())
                    .collect()
            })
            .unwrap_or_default();
        pending_deps.insert(n.as_str(), deps);
    }

    let mut order = Vec::with_capacity(names.len());
    while !pending_deps.is_empty() {
        let ready = pending_deps
            .iter()
            .find(|(_, deps)| deps.is_empty())
            .map(|(n, _)| *n);
        let Some(next) = ready else {
            order.extend(pending_deps.keys().map(|n| String::from(*n)));
            break;
        };
        pending_deps.remove(next);
        for deps in pending_deps.values_mut() {
            deps.remove(next);
        }
        order.push(String::from(next));
    }
    order
}

/// Plans the actions that take `reported` (or a blank station) to `desired`.
///
/// Order: removals of unassigned packages, installs in dependency order,
/// configures for stale configs, deactivations, then activations in
/// dependency order. Ties break on ascending name.
pub fn compute_actions<C: PackageCatalog>(
    desired: &DesiredState,
    reported: Option<&ReportedState>,
    catalog: &C,
) -> Vec<Action> {
    let blank = ReportedState::default();
    let reported = reported.unwrap_or(&blank);
    let mut actions = Vec::new();

    for name in reported.installed.keys() {
        if !desired.assignments.contains_key(name) {
            actions.push(Action::Remove { name: name.clone() });
        }
    }

    let to_install: BTreeSet<String> = desired
        .assignments
        .iter()
        .filter(|(n, a)| reported.installed.get(*n) != Some(&a.version))
        .map(|(n, _)| n.clone())
        .collect();
    for name in dependency_order(&to_install, desired, catalog) {
        let version = desired.assignments[&name].version;
        actions.push(Action::Install { name, version });
    }

    for (app, cfg) in &desired.configs {
        let applied = reported.applied_config_versions.get(app).copied().unwrap_or(0);
        if applied < cfg.version {
            actions.push(Action::Configure {
                app: app.clone(),
                config: cfg.clone(),
            });
        }
    }

    for (name, a) in &desired.assignments {
        if a.activation == Activation::Inactive
            && reported.active.contains(name)
            && !to_install.contains(name)
        {
            actions.push(Action::Deactivate { name: name.clone() });
        }
    }

    let to_activate: BTreeSet<String> = desired
        .assignments
        .iter()
        .filter(|(n, a)| {
            a.activation == Activation::Active
                && (to_install.contains(*n) || !reported.active.contains(*n))
        })
        .map(|(n, _)| n.clone())
        .collect();
    for name in dependency_order(&to_activate, desired, catalog) {
        actions.push(Action::Activate { name });
    }

    actions
}

/// Reference station semantics for an action list with no failures.
///
/// Install replaces any installed version and leaves the package stopped;
/// Remove drops it entirely; Activate is a no-op on packages that are not
/// installed.
pub fn apply_actions(reported: Option<&ReportedState>, actions: &[Action]) -> ReportedState {
    let mut r = reported.cloned().unwrap_or_default();
    for a in actions {
        apply_one(&mut r, a);
    }
    r
}

pub fn apply_one(r: &mut ReportedState, action: &Action) {
    match action {
        Action::Remove { name } => {
            r.installed.remove(name);
            r.active.remove(name);
            r.health.remove(name);
        }
        Action::Install { name, version } => {
            r.installed.insert(name.clone(), *version);
            r.active.remove(name);
            r.health.insert(name.clone(), FunctionHealth::Stopped);
        }
        Action::Configure { app, config } => {
            r.applied_config_versions.insert(app.clone(), config.version);
        }
        Action::Activate { name } => {
            if r.installed.contains_key(name) {
                r.active.insert(name.clone());
                r.health.insert(name.clone(), FunctionHealth::Running);
            }
        }
        Action::Deactivate { name } => {
            if r.active.remove(name) {
                r.health.insert(name.clone(), FunctionHealth::Stopped);
            }
        }
    }
}

/// Replaces the config for `app` with `entries`, bumping its version.
pub fn next_config(
    desired: &DesiredState,
    app: &str,
    entries: BTreeMap<String, String>,
) -> Result<ConfigSet, crate::model::EmptyConfigKey> {
    let version = desired.configs.get(app).map_or(0, |c| c.version) + 1;
    ConfigSet::new(app, version, entries)
}
