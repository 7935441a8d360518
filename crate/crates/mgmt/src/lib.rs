//! Center, agent, wire protocol and network simulation for a fleet of
//! roadside stations.

pub mod agent;
pub mod api;
pub mod archive;
pub mod center;
pub mod report;
pub mod store;
pub mod wire;
pub mod scenario;
pub mod sim;
