//! Desired and reported station state, and the actions that move one toward the other.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::model::ConfigSet;
use crate::version::Version;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activation {
    Active,
    Inactive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub version: Version,
    pub activation: Activation,
}

/// What the center wants a station to run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesiredState {
    pub assignments: BTreeMap<String, Assignment>,
    pub configs: BTreeMap<String, ConfigSet>,
}

impl DesiredState {
    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty() && self.configs.is_empty()
    }

    pub fn active_names(&self) -> BTreeSet<String> {
        self.assignments
            .iter()
            .filter(|(_, a)| a.activation == Activation::Active)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// The reported state a station reaches once it has applied everything.
    pub fn expected_report(&self) -> ReportedState {
        let mut r = ReportedState {
            installed: self
                .assignments
                .iter()
                .map(|(n, a)| (n.clone(), a.version))
                .collect(),
            active: self.active_names(),
            applied_config_versions: self
                .configs
                .iter()
                .map(|(n, c)| (n.clone(), c.version))
                .collect(),
            health: BTreeMap::new(),
        };
        for name in r.installed.keys() {
            let h = if r.active.contains(name) {
                FunctionHealth::Running
            } else {
                FunctionHealth::Stopped
            };
            r.health.insert(name.clone(), h);
        }
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FunctionHealth {
    Running,
    Stopped,
    Faulted,
}

/// A station's own account of what it runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedState {
    pub installed: BTreeMap<String, Version>,
    pub active: BTreeSet<String>,
    pub applied_config_versions: BTreeMap<String, u64>,
    pub health: BTreeMap<String, FunctionHealth>,
}

impl ReportedState {
    /// `active ⊆ keys(installed)`.
    pub fn is_consistent(&self) -> bool {
        self.active.iter().all(|n| self.installed.contains_key(n))
    }

    /// Field-wise comparison that ignores health.
    pub fn same_configuration(&self, other: &ReportedState) -> bool {
        self.installed == other.installed
            && self.active == other.active
            && self.applied_config_versions == other.applied_config_versions
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Install { name: String, version: Version },
    Remove { name: String },
    Configure { app: String, config: ConfigSet },
    Activate { name: String },
    Deactivate { name: String },
}

impl Action {
    /// The package or application the action operates on.
    pub fn target(&self) -> &str {
        match self {
            Action::Install { name, .. }
            | Action::Remove { name }
            | Action::Activate { name }
            | Action::Deactivate { name } => name,
            Action::Configure { app, .. } => app,
        }
    }
}
