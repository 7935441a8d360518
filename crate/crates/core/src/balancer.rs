//! Round-robin dispatch over the center's stateless workers.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkerHealth {
    Healthy,
    Down,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Worker {
    pub id: String,
    pub health: WorkerHealth,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("no healthy worker available")]
    NoWorkerAvailable,
    #[error("unknown worker `{0}`")]
    UnknownWorker(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPool {
    workers: Vec<Worker>,
    cursor: usize,
    dispatched: BTreeMap<String, u64>,
}

impl WorkerPool {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        WorkerPool {
            workers: ids
                .into_iter()
                .map(|id| Worker {
                    id: id.into(),
                    health: WorkerHealth::Healthy,
                })
                .collect(),
            cursor: 0,
            dispatched: BTreeMap::new(),
        }
    }

    pub fn workers(&self) -> &[Worker] {
        &self.workers
    }

    /// Next healthy worker at or after the cursor, in list order.
    pub fn dispatch(&mut self) -> Result<String, PoolError> {
        let n = self.workers.len();
        for step in 0..n {
            let idx = (self.cursor + step) % n;
            if self.workers[idx].health == WorkerHealth::Healthy {
                self.cursor = (idx + 1) % n;
                let id = self.workers[idx].id.clone();
                *self.dispatched.entry(id.clone()).or_default() += 1;
                return Ok(id);
            }
        }
        Err(PoolError::NoWorkerAvailable)
    }

    pub fn set_health(&mut self, id: &str, health: WorkerHealth) -> Result<(), PoolError> {
        let w = self
            .workers
            .iter_mut()
            .find(|w| w.id == id)
            .ok_or_else(|| PoolError::UnknownWorker(id.into()))?;
        w.health = health;
        Ok(())
    }

    pub fn health(&self, id: &str) -> Option<WorkerHealth> {
        self.workers.iter().find(|w| w.id == id).map(|w| w.health)
    }

    pub fn dispatch_counts(&self) -> &BTreeMap<String, u64> {
        &self.dispatched
    }

    pub fn healthy(&self) -> impl Iterator<Item = &Worker> {
        self.workers
            .iter()
            .filter(|w| w.health == WorkerHealth::Healthy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(pool: &mut WorkerPool, n: usize) -> Vec<String> {
        (0..n).map(|_| pool.dispatch().unwrap()).collect()
    }

    #[test]
    fn plain_round_robin() {
        let mut p = WorkerPool::new(["w1", "w2", "w3"]);
        assert_eq!(run(&mut p, 5), ["w1", "w2", "w3", "w1", "w2"]);
    }

    #[test]
    fn skips_down_worker() {
        let mut p = WorkerPool::new(["w1", "w2", "w3"]);
        p.set_health("w2", WorkerHealth::Down).unwrap();
        assert_eq!(run(&mut p, 4), ["w1", "w3", "w1", "w3"]);
    }

    #[test]
    fn all_down_and_unknown() {
        let mut p = WorkerPool::new(["w1"]);
        p.set_health("w1", WorkerHealth::Down).unwrap();
        assert_eq!(p.dispatch(), Err(PoolError::NoWorkerAvailable));
        assert_eq!(
            p.set_health("w9", WorkerHealth::Down),
            Err(PoolError::UnknownWorker("w9".into()))
        );
    }

    #[test]
    fn rejoins_at_list_position() {
        let mut p = WorkerPool::new(["w1", "w2", "w3"]);
        p.set_health("w2", WorkerHealth::Down).unwrap();
        assert_eq!(run(&mut p, 1), ["w1"]);
        p.set_health("w2", WorkerHealth::Healthy).unwrap();
        assert_eq!(run(&mut p, 4), ["w2", "w3", "w1", "w2"]);
    }

    proptest! {
        #[test]
        fn full_rotation_windows_are_exactly_fair(
            health in proptest::collection::vec(any::<bool>(), 1..8),
            warmup in 0usize..20,
            rounds in 1usize..6,
        ) {
            prop_assume!(health.iter().any(|h| *h));
            let ids: Vec<String> = (0..health.len()).map(|i| alloc::format!("w{i}")).collect();
            let mut p = WorkerPool::new(ids.clone());
            for (id, h) in ids.iter().zip(&health) {
                if !h { p.set_health(id, WorkerHealth::Down).unwrap(); }
            }
            run(&mut p, warmup);
            let k = health.iter().filter(|h| **h).count();
            let mut counts = BTreeMap::new();
            for id in run(&mut p, rounds * k) {
                *counts.entry(id).or_insert(0usize) += 1;
            }
            prop_assert_eq!(counts.len(), k);
            prop_assert!(counts.values().all(|c| *c == rounds));
        }
    }
}
