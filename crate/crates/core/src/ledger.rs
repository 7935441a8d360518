//! Exact resource accounting with a reserved management share, and
//! priority-weighted arbitration of contended capacity.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{PackageType, ResourceQuota};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resource {
    Cpu,
    Ram,
    Disk,
    BandwidthUp,
    BandwidthV2i,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Cpu,
        Resource::Ram,
        Resource::Disk,
        Resource::BandwidthUp,
        Resource::BandwidthV2i,
    ];

    pub fn limit(self, quota: &ResourceQuota) -> u64 {
        match self {
            Resource::Cpu => quota.cpu_share,
            Resource::Ram => quota.ram,
            Resource::Disk => quota.disk,
            Resource::BandwidthUp => quota.bandwidth_up,
            Resource::BandwidthV2i => quota.bandwidth_v2i,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DenyReason {
    NotActive,
    OwnQuota,
    ReservedShare,
    Capacity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grant {
    Granted,
    Denied(DenyReason),
}

/// Who is asking, as far as the ledger cares.
#[derive(Clone, Copy, Debug)]
pub struct Requester<'a> {
    pub name: &'a str,
    pub kind: PackageType,
    pub active: bool,
    pub quota: ResourceQuota,
}

impl Requester<'_> {
    fn is_management(&self) -> bool {
        self.kind == PackageType::Management
    }
}

pub const DEFAULT_RESERVED_PERMILLE: u64 = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLedger {
    capacity: BTreeMap<Resource, u64>,
    reserved_permille: u64,
    usage: BTreeMap<String, BTreeMap<Resource, u64>>,
    management: BTreeSet<String>,
}

impl ResourceLedger {
    /// # Panics
    /// If `reserved_permille > 1000`.
    pub fn new(capacity: BTreeMap<Resource, u64>, reserved_permille: u64) -> Self {
        assert!(reserved_permille <= 1000);
        ResourceLedger {
            capacity,
            reserved_permille,
            usage: BTreeMap::new(),
            management: BTreeSet::new(),
        }
    }

    pub fn capacity(&self, r: Resource) -> u64 {
        self.capacity.get(&r).copied().unwrap_or(0)
    }

    /// Largest total that non-management holders may have granted.
    pub fn function_limit(&self, r: Resource) -> u64 {
        let cap = u128::from(self.capacity(r));
        (cap * u128::from(1000 - self.reserved_permille) / 1000) as u64
    }

    pub fn usage_of(&self, name: &str, r: Resource) -> u64 {
        self.usage
            .get(name)
            .and_then(|u| u.get(&r))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_usage(&self, r: Resource) -> u64 {
        self.usage.values().filter_map(|u| u.get(&r)).sum()
    }

    pub fn function_usage(&self, r: Resource) -> u64 {
        self.usage
            .iter()
            .filter(|(n, _)| !self.management.contains(*n))
            .filter_map(|(_, u)| u.get(&r))
            .sum()
    }

    pub fn try_acquire(&mut self, who: &Requester<'_>, r: Resource, amount: u64) -> Grant {
        if !who.active && !who.is_management() {
            return Grant::Denied(DenyReason::NotActive);
        }
        if amount == 0 {
            return Grant::Granted;
        }
        let own = self.usage_of(who.name, r);
        if own.saturating_add(amount) > r.limit(&who.quota) {
            return Grant::Denied(DenyReason::OwnQuota);
        }
        if !who.is_management()
            && self.function_usage(r).saturating_add(amount) > self.function_limit(r)
        {
            return Grant::Denied(DenyReason::ReservedShare);
        }
        if self.total_usage(r).saturating_add(amount) > self.capacity(r) {
            return Grant::Denied(DenyReason::Capacity);
        }
        if who.is_management() {
            self.management.insert(who.name.into());
        }
        *self
            .usage
            .entry(who.name.into())
            .or_default()
            .entry(r)
            .or_default() += amount;
        Grant::Granted
    }

    /// Returns what was actually released (never more than held).
    pub fn release(&mut self, name: &str, r: Resource, amount: u64) -> u64 {
        let Some(u) = self.usage.get_mut(name) else {
            return 0;
        };
        let Some(held) = u.get_mut(&r) else {
            return 0;
        };
        let freed = amount.min(*held);
        *held -= freed;
        if *held == 0 {
            u.remove(&r);
        }
        if u.is_empty() {
            self.usage.remove(name);
            self.management.remove(name);
        }
        freed
    }

    pub fn release_all(&mut self, name: &str) {
        self.usage.remove(name);
        self.management.remove(name);
    }
}

/// One party competing for a contended resource.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contender {
    pub name: String,
    pub priority: u8,
    /// Remaining headroom under the contender's own quota.
    pub cap: u64,
    pub request: u64,
}

impl Contender {
    fn weight(&self) -> u128 {
        u128::from(self.priority) + 1
    }

    fn demand(&self) -> u64 {
        self.request.min(self.cap)
    }
}

/// Splits `total` proportionally to the weights; leftover units go to the
/// largest remainders, ties by position (callers pass name order).
fn largest_remainder(total: u64, weights: &[u128]) -> Vec<u64> {
    let sum: u128 = weights.iter().sum();
    if sum == 0 {
        return alloc::vec![0; weights.len()];
    }
    let total = u128::from(total);
    let mut shares: Vec<u64> = weights.iter().map(|w| (total * w / sum) as u64).collect();
    let handed: u128 = shares.iter().map(|s| u128::from(*s)).sum();
    let mut leftover = (total - handed) as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|a, b| {
        let ra = total * weights[*a] % sum;
        let rb = total * weights[*b] % sum;
        rb.cmp(&ra).then(a.cmp(b))
    });
    for i in order {
        if leftover == 0 {
            break;
        }
        shares[i] += 1;
        leftover -= 1;
    }
    shares
}

/// Weighted-fair split of `free` among contenders, weight = priority + 1.
///
/// Each share is capped by the contender's own demand; what the caps free
/// up is split once more among those still short. Anything left after that
/// single pass stays unallocated.
pub fn arbitrate(contenders: &[Contender], free: u64) -> BTreeMap<String, u64> {
    let mut sorted: Vec<&Contender> = contenders.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut alloc: BTreeMap<String, u64> = sorted.iter().map(|c| (c.name.clone(), 0)).collect();

    let wanting: Vec<&Contender> = sorted.iter().copied().filter(|c| c.demand() > 0).collect();
    let total_demand: u128 = wanting.iter().map(|c| u128::from(c.demand())).sum();
    if total_demand <= u128::from(free) {
        for c in wanting {
            alloc.insert(c.name.clone(), c.demand());
        }
        return alloc;
    }

    let weights: Vec<u128> = wanting.iter().map(|c| c.weight()).collect();
    let first = largest_remainder(free, &weights);
    let mut granted: Vec<u64> = wanting
        .iter()
        .zip(&first)
        .map(|(c, s)| (*s).min(c.demand()))
        .collect();
    let leftover = free - granted.iter().sum::<u64>();

    if leftover > 0 {
        let short: Vec<usize> = (0..wanting.len())
            .filter(|i| granted[*i] < wanting[*i].demand())
            .collect();
        let w: Vec<u128> = short.iter().map(|i| wanting[*i].weight()).collect();
        let second = largest_remainder(leftover, &w);
        for (i, extra) in short.into_iter().zip(second) {
            granted[i] = (granted[i] + extra).min(wanting[i].demand());
        }
    }

    for (c, g) in wanting.iter().zip(granted) {
        alloc.insert(c.name.clone(), g);
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    const MB: u64 = 1_000_000;

    fn ledger() -> ResourceLedger {
        ResourceLedger::new([(Resource::Ram, 100 * MB)].into_iter().collect(), 100)
    }

    fn func<'a>(name: &'a str, ram: u64) -> Requester<'a> {
        Requester {
            name,
            kind: PackageType::Function,
            active: true,
            quota: ResourceQuota { ram, ..Default::default() },
        }
    }

    #[test]
    fn reserved_share_blocks_functions() {
        let mut l = ledger();
        assert_eq!(l.try_acquire(&func("f", 50 * MB), Resource::Ram, 50 * MB), Grant::Granted);
        // 50 + 45 = 95 MB > 90 MB function limit.
        assert_eq!(
            l.try_acquire(&func("g", 50 * MB), Resource::Ram, 45 * MB),
            Grant::Denied(DenyReason::ReservedShare)
        );
        assert_eq!(l.try_acquire(&func("g", 50 * MB), Resource::Ram, 40 * MB), Grant::Granted);
        let mgmt = Requester {
            name: "fm",
            kind: PackageType::Management,
            active: false,
            quota: ResourceQuota { ram: 100 * MB, ..Default::default() },
        };
        assert_eq!(l.try_acquire(&mgmt, Resource::Ram, 10 * MB), Grant::Granted);
        assert_eq!(l.try_acquire(&mgmt, Resource::Ram, 1), Grant::Denied(DenyReason::Capacity));
    }

    #[test]
    fn own_quota_wins_over_free_capacity() {
        let mut l = ledger();
        assert_eq!(
            l.try_acquire(&func("f", 10 * MB), Resource::Ram, 11 * MB),
            Grant::Denied(DenyReason::OwnQuota)
        );
        // Zero quota means no access at all.
        assert_eq!(
            l.try_acquire(&func("f", 10 * MB), Resource::Cpu, 1),
            Grant::Denied(DenyReason::OwnQuota)
        );
    }

    #[test]
    fn inactive_function_denied() {
        let mut l = ledger();
        let mut f = func("f", MB);
        f.active = false;
        assert_eq!(l.try_acquire(&f, Resource::Ram, 1), Grant::Denied(DenyReason::NotActive));
    }

    fn c(name: &str, priority: u8, cap: u64, request: u64) -> Contender {
        Contender { name: name.into(), priority, cap, request }
    }

    /// Brute-force largest-remainder: hand out `free` one unit at a time to
    /// whoever is furthest below their exact proportional share.
    fn unit_oracle(free: u64, weights: &[(u64, &str)]) -> Vec<u64> {
        let sum: u64 = weights.iter().map(|w| w.0).sum();
        let mut got = vec![0u64; weights.len()];
        let floors: Vec<u64> = weights.iter().map(|w| free * w.0 / sum).collect();
        got.copy_from_slice(&floors);
        let mut left = free - floors.iter().sum::<u64>();
        let mut idx: Vec<usize> = (0..weights.len()).collect();
        // Exact fractional part as a rational p/sum.
        idx.sort_by_key(|i| (core::cmp::Reverse(free * weights[*i].0 % sum), weights[*i].1));
        for i in idx {
            if left == 0 { break; }
            got[i] += 1;
            left -= 1;
        }
        got
    }

    #[test]
    fn priority_split_matches_oracle() {
        let a = arbitrate(&[c("f", 150, u64::MAX, 1000), c("g", 50, u64::MAX, 1000)], 1000);
        let o = unit_oracle(1000, &[(151, "f"), (51, "g")]);
        assert_eq!(o, [748, 252]);
        assert_eq!(a["f"], 748);
        assert_eq!(a["g"], 252);
    }

    #[test]
    fn lone_contender_gets_its_request() {
        let a = arbitrate(&[c("f", 1, 500, 400)], 1000);
        assert_eq!(a["f"], 400);
    }

    #[test]
    fn cap_then_redistribute() {
        let a = arbitrate(&[c("f", 150, 300, 1000), c("g", 50, u64::MAX, 1000)], 1000);
        assert_eq!(a["f"], 300);
        assert_eq!(a["g"], 700);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Acquire(usize, u64),
        Release(usize, u64),
    }

    proptest! {
        #[test]
        fn conservation_and_reserved_share(ops in proptest::collection::vec(
            prop_oneof![(0usize..4, 0u64..60).prop_map(|(w, a)| Op::Acquire(w, a)), (0usize..4, 0u64..60).prop_map(|(w, a)| Op::Release(w, a))],
            0..80,
        )) {
            let mut l = ResourceLedger::new([(Resource::Ram, 100)].into_iter().collect(), 100);
            let names = ["a", "b", "c", "mgmt"];
            let mut granted = 0u64;
            let mut released = 0u64;
            for op in ops {
                match op {
                    Op::Acquire(w, amt) => {
                        let who = Requester {
                            name: names[w],
                            kind: if w == 3 { PackageType::Management } else { PackageType::Function },
                            active: true,
                            quota: ResourceQuota { ram: 70, ..Default::default() },
                        };
                        if l.try_acquire(&who, Resource::Ram, amt) == Grant::Granted { granted += amt; }
                    }
                    Op::Release(w, amt) => released += l.release(names[w], Resource::Ram, amt),
                }
                prop_assert_eq!(l.total_usage(Resource::Ram), granted - released);
                prop_assert!(l.total_usage(Resource::Ram) <= 100);
                prop_assert!(l.function_usage(Resource::Ram) <= 90);
            }
        }

        #[test]
        fn arbitration_respects_caps_and_free(
            cs in proptest::collection::vec((any::<u8>(), 0u64..2000, 0u64..2000), 1..6),
            free in 0u64..5000,
        ) {
            let contenders: Vec<Contender> = cs.iter().enumerate()
                .map(|(i, (p, cap, req))| c(&alloc::format!("c{i}"), *p, *cap, *req)).collect();
            let a = arbitrate(&contenders, free);
            let total: u64 = a.values().sum();
            prop_assert!(total <= free);
            for x in &contenders {
                prop_assert!(a[&x.name] <= x.cap.min(x.request));
            }
            let demand: u64 = contenders.iter().map(|x| x.cap.min(x.request)).sum();
            if demand <= free { prop_assert_eq!(total, demand); }
        }
    }
}
