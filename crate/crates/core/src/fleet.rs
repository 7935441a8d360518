//! Generating station registrations for a fleet of a given size and mix.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::model::{RegionClass, StationIdentity};

/// Profiles handed out round-robin across the generated fleet.
pub const PROFILE_CYCLE: [&str; 4] = ["FIBER", "XDSL", "UMTS", "GPRS"];

const SCALE: f64 = 1_000_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FleetError {
    #[error("fleet size must be at least 1")]
    ZeroCount,
    #[error("region mix has no positive share")]
    EmptyMix,
    #[error("share for {0:?} must be finite and non-negative")]
    InvalidShare(RegionClass),
}

/// Splits `count` over the classes in proportion to `mix` by largest
/// remainder. Ties go to the class declared first.
pub fn split_counts(count: usize, mix: &BTreeMap<RegionClass, f64>) -> Result<BTreeMap<RegionClass, usize>, FleetError> {
    if count == 0 {
        return Err(FleetError::ZeroCount);
    }
    let mut weights = BTreeMap::new();
    for (&class, &share) in mix {
        if !share.is_finite() || share < 0.0 {
            return Err(FleetError::InvalidShare(class));
        }
        weights.insert(class, (share * SCALE + 0.5) as u128);
    }
    let total: u128 = weights.values().sum();
    if total == 0 {
        return Err(FleetError::EmptyMix);
    }
    let n = count as u128;
    let mut out: BTreeMap<RegionClass, usize> = BTreeMap::new();
    let mut rems = Vec::new();
    let mut given = 0u128;
    for (&class, &w) in &weights {
        let q = n * w / total;
        given += q;
        out.insert(class, q as usize);
        rems.push((n * w % total, class));
    }
    // BTreeMap iteration is declaration order, and the sort is stable.
    rems.sort_by_key(|r| core::cmp::Reverse(r.0));
    for &(_, class) in rems.iter().take((n - given) as usize) {
        *out.get_mut(&class).expect("class present") += 1;
    }
    Ok(out)
}

/// Registrations `irs-001`.. bound to `hw-001`.., grouped by class in
/// declaration order, with link profiles cycling over the whole fleet.
pub fn fleet_bootstrap(count: usize, mix: &BTreeMap<RegionClass, f64>) -> Result<Vec<StationIdentity>, FleetError> {
    let counts = split_counts(count, mix)?;
    let mut out = Vec::with_capacity(count);
    for class in RegionClass::ALL {
        for _ in 0..counts.get(&class).copied().unwrap_or(0) {
            let i = out.len();
            out.push(StationIdentity {
                logical_id: format!("irs-{:03}", i + 1),
                hardware_id: format!("hw-{:03}", i + 1),
                link_profile: PROFILE_CYCLE[i % PROFILE_CYCLE.len()].into(),
                region_class: class,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RegionClass::*;

    fn mix(v: &[(RegionClass, f64)]) -> BTreeMap<RegionClass, f64> {
        v.iter().copied().collect()
    }

    fn standard() -> BTreeMap<RegionClass, f64> {
        mix(&[(Urban, 0.3), (HighwayDense, 0.3), (HighwaySparse, 0.2), (Rural, 0.2)])
    }

    /// Hare quota by exact rational comparison on the reduced permille mix.
    fn oracle(count: u64, permille: &[(RegionClass, u64)]) -> BTreeMap<RegionClass, usize> {
        let total: u64 = permille.iter().map(|p| p.1).sum();
        let mut base: Vec<(RegionClass, u64, u64)> =
            permille.iter().map(|&(c, w)| (c, count * w / total, count * w % total)).collect();
        let mut left = count - base.iter().map(|b| b.1).sum::<u64>();
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.sort_by(|&a, &b| base[b].2.cmp(&base[a].2).then(base[a].0.cmp(&base[b].0)));
        for i in order {
            if left == 0 {
                break;
            }
            base[i].1 += 1;
            left -= 1;
        }
        base.into_iter().map(|(c, n, _)| (c, n as usize)).collect()
    }

    #[test]
    fn hundred_stations() {
        let f = fleet_bootstrap(100, &standard()).unwrap();
        let c = split_counts(100, &standard()).unwrap();
        assert_eq!(c, oracle(100, &[(Urban, 300), (HighwayDense, 300), (HighwaySparse, 200), (Rural, 200)]));
        assert_eq!((c[&Urban], c[&HighwayDense], c[&HighwaySparse], c[&Rural]), (30, 30, 20, 20));
        assert_eq!(f.len(), 100);
        assert_eq!(f[0].logical_id, "irs-001");
        assert_eq!(f[99].hardware_id, "hw-100");
        for p in PROFILE_CYCLE {
            assert_eq!(f.iter().filter(|s| s.link_profile == p).count(), 25);
        }
    }

    #[test]
    fn single_station_goes_to_largest_share() {
        let f = fleet_bootstrap(1, &standard()).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].region_class, HighwayDense);
        let f = fleet_bootstrap(1, &mix(&[(Rural, 0.6), (Urban, 0.4)])).unwrap();
        assert_eq!(f[0].region_class, Rural);
    }

    #[test]
    fn rejections() {
        assert_eq!(fleet_bootstrap(0, &standard()), Err(FleetError::ZeroCount));
        assert_eq!(fleet_bootstrap(3, &BTreeMap::new()), Err(FleetError::EmptyMix));
        assert_eq!(fleet_bootstrap(3, &mix(&[(Rural, -1.0)])), Err(FleetError::InvalidShare(Rural)));
    }

    proptest! {
        #[test]
        fn matches_oracle(count in 1u64..500, w in proptest::collection::vec(0u64..1000, 4)) {
            prop_assume!(w.iter().sum::<u64>() > 0);
            let classes = RegionClass::ALL;
            let m: BTreeMap<_, _> = classes.iter().zip(&w).map(|(&c, &x)| (c, x as f64 / 1000.0)).collect();
            let got = split_counts(count as usize, &m).unwrap();
            let want = oracle(count, &classes.iter().zip(&w).map(|(&c, &x)| (c, x)).collect::<Vec<_>>());
            prop_assert_eq!(got.values().sum::<usize>(), count as usize);
            prop_assert_eq!(got, want);
        }
    }
}
