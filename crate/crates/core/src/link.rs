//! A station's link to the center: class-based admission, FIFO serialization
//! and propagation delay.
//!
//! Uplink admission goes through token buckets. Management frames use a
//! bucket sized to the reserved share. Function frames pass their own app
//! bucket and then the bucket shared by all function traffic. Every
//! (direction, class) pair has its own FIFO that serializes at full link
//! bandwidth, so a function backlog never delays a management frame.
//! Bernoulli loss applies to function frames only. Management runs over a
//! reliable stream and is retransmitted below this model.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ledger::DEFAULT_RESERVED_PERMILLE;
use crate::model::LinkProfile;
use crate::shaping::{ShapeError, TokenBucket};
use crate::time::SimTime;

/// Smallest burst given to the management bucket, so a single management
/// frame fits even on the slowest profile.
pub const MIN_MANAGEMENT_BURST: u64 = 4096;

/// Function frames that could not be admitted within this horizon are
/// dropped at the sender.
pub const DEFAULT_MAX_QUEUE_DELAY: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "class", content = "app", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrafficClass {
    Management,
    Function(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("link is down")]
    LinkDown,
    #[error("application {0} has no uplink bandwidth")]
    NoBandwidth(String),
    #[error("send queue full, frame would wait until {0}")]
    Backlog(SimTime),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub admitted_at: SimTime,
    pub tx_start: SimTime,
    pub tx_end: SimTime,
    pub arrive_at: SimTime,
    pub dropped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationLink {
    profile: LinkProfile,
    reserved_permille: u64,
    max_queue_delay: Duration,
    up: bool,
    management: TokenBucket,
    function_share: TokenBucket,
    apps: BTreeMap<String, TokenBucket>,
    busy_until: BTreeMap<(Direction, TrafficClass), SimTime>,
}

impl StationLink {
    pub fn new(profile: LinkProfile) -> Self {
        StationLink::with_reserved(profile, DEFAULT_RESERVED_PERMILLE)
    }

    pub fn with_reserved(profile: LinkProfile, reserved_permille: u64) -> Self {
        let reserved_permille = reserved_permille.min(1000);
        let mgmt_rate = profile.bandwidth * reserved_permille / 1000;
        let share = profile.bandwidth - mgmt_rate;
        StationLink {
            management: TokenBucket::new(mgmt_rate, mgmt_rate.max(MIN_MANAGEMENT_BURST)),
            function_share: TokenBucket::per_second(share),
            profile,
            reserved_permille,
            max_queue_delay: DEFAULT_MAX_QUEUE_DELAY,
            up: true,
            apps: BTreeMap::new(),
            busy_until: BTreeMap::new(),
        }
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn reserved_permille(&self) -> u64 {
        self.reserved_permille
    }

    pub fn management_rate(&self) -> u64 {
        self.management.rate()
    }

    pub fn function_share_rate(&self) -> u64 {
        self.function_share.rate()
    }

    pub fn set_max_queue_delay(&mut self, d: Duration) {
        self.max_queue_delay = d;
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    pub fn set_up(&mut self, up: bool) {
        self.up = up;
    }

    /// Installs or replaces the bucket for `app`. The effective rate is the
    /// smaller of the app's quota and the function share.
    pub fn set_app_quota(&mut self, app: &str, bandwidth_up: u64) {
        let rate = bandwidth_up.min(self.function_share.rate());
        self.apps.insert(app.into(), TokenBucket::per_second(rate));
    }

    pub fn app_rate(&self, app: &str) -> Option<u64> {
        self.apps.get(app).map(TokenBucket::rate)
    }

    pub fn app_bucket(&self, app: &str) -> Option<&TokenBucket> {
        self.apps.get(app)
    }

    fn serialization(&self, bytes: u64) -> Duration {
        let us = u128::from(bytes) * 1_000_000;
        Duration::from_micros(us.div_ceil(u128::from(self.profile.bandwidth)) as u64)
    }

    fn admit_up(&mut self, class: &TrafficClass, bytes: u64, now: SimTime) -> Result<SimTime, LinkError> {
        match class {
            TrafficClass::Management => {
                // Oversized management frames are admitted in burst-sized pieces.
                let chunk = self.management.burst().max(1);
                let mut left = bytes;
                let mut at = now;
                while left > 0 {
                    let n = left.min(chunk);
                    at = self.management.reserve(n, at)?;
                    left -= n;
                }
                Ok(at)
            }
            TrafficClass::Function(app) => {
                let bucket = self
                    .apps
                    .get_mut(app)
                    .filter(|b| b.rate() > 0)
                    .ok_or_else(|| LinkError::NoBandwidth(app.clone()))?;
                // Probe first so a frame dropped for backlog consumes nothing.
                let mut probe = bucket.clone();
                let t1 = probe.reserve(bytes, now)?;
                let mut share = self.function_share.clone();
                let t2 = share.reserve(bytes, t1)?;
                if t2.since(now) > self.max_queue_delay {
                    return Err(LinkError::Backlog(t2));
                }
                *bucket = probe;
                self.function_share = share;
                Ok(t2)
            }
        }
    }

    /// Schedules one frame. The returned delivery says when it reaches the
    /// far end and whether it was lost on the way.
    pub fn send<R: Rng + ?Sized>(
        &mut self,
        dir: Direction,
        class: TrafficClass,
        bytes: u64,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Delivery, LinkError> {
        if !self.up {
            return Err(LinkError::LinkDown);
        }
        if bytes == 0 {
            return Err(ShapeError::EmptyFrame.into());
        }
        let admitted_at = match dir {
            Direction::Up => self.admit_up(&class, bytes, now)?,
            Direction::Down => now,
        };
        let lossy = matches!(class, TrafficClass::Function(_));
        let tx_time = self.serialization(bytes);
        let fifo = self.busy_until.entry((dir, class)).or_insert(SimTime::ZERO);
        let tx_start = admitted_at.max(*fifo);
        let tx_end = tx_start + tx_time;
        *fifo = tx_end;
        let dropped = lossy && self.profile.loss_rate > 0.0 && rng.gen_bool(self.profile.loss_rate);
        Ok(Delivery {
            admitted_at,
            tx_start,
            tx_end,
            arrive_at: tx_end + self.profile.delay(),
            dropped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_link_profiles;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn profile(name: &str) -> LinkProfile {
        builtin_link_profiles()
            .into_iter()
            .find(|p| p.name == name)
            .unwrap()
    }

    fn lossless(name: &str) -> LinkProfile {
        let mut p = profile(name);
        p.loss_rate = 0.0;
        p
    }

    #[test]
    fn gprs_management_frame_example() {
        let mut link = StationLink::new(profile("GPRS"));
        assert_eq!(link.management_rate(), 200);
        let mut rng = SmallRng::seed_from_u64(1);
        let d = link
            .send(Direction::Up, TrafficClass::Management, 1000, SimTime::ZERO, &mut rng)
            .unwrap();
        assert_eq!(d.admitted_at, SimTime::ZERO);
        assert_eq!(d.tx_end, SimTime::from_millis(500));
        assert_eq!(d.arrive_at, SimTime::from_millis(800));
        assert!(!d.dropped);
    }

    #[test]
    fn management_not_blocked_by_function_backlog() {
        let mut link = StationLink::new(lossless("GPRS"));
        link.set_app_quota("flood", 1800);
        let mut rng = SmallRng::seed_from_u64(1);
        let mut last = None;
        for _ in 0..20 {
            if let Ok(d) = link.send(
                Direction::Up,
                TrafficClass::Function("flood".into()),
                1500,
                SimTime::ZERO,
                &mut rng,
            ) {
                last = Some(d);
            }
        }
        assert!(last.unwrap().arrive_at > SimTime::from_secs(10));
        let m = link
            .send(Direction::Up, TrafficClass::Management, 400, SimTime::ZERO, &mut rng)
            .unwrap();
        assert_eq!(m.arrive_at, SimTime::from_millis(500));
    }

    #[test]
    fn link_down_and_no_bandwidth() {
        let mut link = StationLink::new(profile("FIBER"));
        let mut rng = SmallRng::seed_from_u64(1);
        let app = TrafficClass::Function("x".into());
        assert_eq!(
            link.send(Direction::Up, app.clone(), 10, SimTime::ZERO, &mut rng),
            Err(LinkError::NoBandwidth("x".into()))
        );
        link.set_app_quota("x", 0);
        assert!(link.send(Direction::Up, app, 10, SimTime::ZERO, &mut rng).is_err());
        link.set_up(false);
        assert_eq!(
            link.send(Direction::Down, TrafficClass::Management, 10, SimTime::ZERO, &mut rng),
            Err(LinkError::LinkDown)
        );
    }

    #[test]
    fn oversized_management_frame_is_chunked() {
        let mut link = StationLink::new(lossless("GPRS"));
        let mut rng = SmallRng::seed_from_u64(1);
        // 4096 from the full bucket, the remaining 904 after 904/200 s.
        let d = link
            .send(Direction::Up, TrafficClass::Management, 5000, SimTime::ZERO, &mut rng)
            .unwrap();
        assert_eq!(d.admitted_at, SimTime::from_millis(4520));
    }

    #[test]
    fn loss_zero_never_drops_and_loss_applies_to_functions_only() {
        let mut link = StationLink::new(lossless("UMTS"));
        link.set_app_quota("a", 40_000);
        let mut rng = SmallRng::seed_from_u64(3);
        for i in 0..500 {
            let d = link
                .send(Direction::Up, TrafficClass::Function("a".into()), 100, SimTime::from_millis(i * 10), &mut rng)
                .unwrap();
            assert!(!d.dropped);
        }
        let mut p = profile("GPRS");
        p.loss_rate = 0.9;
        let mut link = StationLink::new(p);
        for i in 0..100 {
            let d = link
                .send(Direction::Down, TrafficClass::Management, 100, SimTime::from_secs(i), &mut rng)
                .unwrap();
            assert!(!d.dropped);
        }
    }

    proptest! {
        #[test]
        fn fifo_per_class(sizes in proptest::collection::vec(1u64..1500, 1..60), gaps in proptest::collection::vec(0u64..2000, 60)) {
            let mut link = StationLink::new(lossless("XDSL"));
            link.set_app_quota("a", 100_000);
            let mut rng = SmallRng::seed_from_u64(9);
            let mut now = SimTime::ZERO;
            let mut arrivals: Vec<(TrafficClass, SimTime)> = Vec::new();
            for (i, &n) in sizes.iter().enumerate() {
                now = now + Duration::from_millis(gaps[i]);
                let class = if i % 3 == 0 { TrafficClass::Management } else { TrafficClass::Function("a".into()) };
                if let Ok(d) = link.send(Direction::Up, class.clone(), n, now, &mut rng) {
                    arrivals.push((class, d.arrive_at));
                }
            }
            for class in [TrafficClass::Management, TrafficClass::Function("a".into())] {
                let times: Vec<SimTime> = arrivals.iter().filter(|(c, _)| *c == class).map(|(_, t)| *t).collect();
                prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
