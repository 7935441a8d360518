//! Store-and-forward buffer for V2I broadcast distribution.
//!
//! Messages are held in priority order and rebroadcast once per period until
//! they have been sent `redundancy` times or they expire. The per-tick
//! budget shrinks linearly with channel load, and nothing is sent while no
//! vehicle is in range.

use alloc::vec::Vec;
use core::cmp::Reverse;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{MsgType, Origin, V2iMessage};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfConfig {
    pub capacity: usize,
    pub period: Duration,
    pub max_frames_per_tick: usize,
}

impl Default for SfConfig {
    fn default() -> Self {
        SfConfig {
            capacity: 64,
            period: Duration::from_secs(1),
            max_frames_per_tick: 10,
        }
    }
}

/// Channel occupancy in permille.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelLoad(u16);

impl ChannelLoad {
    pub const IDLE: ChannelLoad = ChannelLoad(0);
    pub const SATURATED: ChannelLoad = ChannelLoad(1000);

    pub fn from_permille(p: u16) -> Self {
        ChannelLoad(p.min(1000))
    }

    /// Clamped to `[0, 1]` and rounded to the nearest permille.
    pub fn from_fraction(f: f64) -> Self {
        if f.is_nan() || f <= 0.0 {
            return ChannelLoad::IDLE;
        }
        if f >= 1.0 {
            return ChannelLoad::SATURATED;
        }
        ChannelLoad((f * 1000.0 + 0.5) as u16)
    }

    pub fn permille(self) -> u16 {
        self.0
    }

    /// `floor((1 - load) * max_frames)`.
    pub fn budget(self, max_frames: usize) -> usize {
        (1000 - usize::from(self.0)) * max_frames / 1000
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    Expired,
    Capacity,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Enqueue {
    Accepted { evicted: Option<u64> },
    Rejected(RejectReason),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Broadcast {
    pub msg_id: u64,
    pub at: SimTime,
    /// 1-based count of this broadcast for the message.
    pub nth: u32,
    pub size: u32,
    pub priority: u8,
    pub msg_type: MsgType,
    pub origin: Origin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RemovalReason {
    Completed,
    Expired {
        broadcasts_done: u32,
        under_redundancy: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub msg_id: u64,
    pub at: SimTime,
    pub reason: RemovalReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub broadcasts: Vec<Broadcast>,
    pub removed: Vec<Removal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferedMessage {
    pub msg: V2iMessage,
    pub broadcasts_done: u32,
    pub next_broadcast_at: SimTime,
}

impl BufferedMessage {
    fn key(&self) -> (Reverse<u8>, SimTime, u64) {
        (Reverse(self.msg.priority), self.msg.expiry, self.msg.msg_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfBuffer {
    config: SfConfig,
    entries: Vec<BufferedMessage>,
    pending_removed: Vec<Removal>,
}

impl SfBuffer {
    pub fn new(config: SfConfig) -> Self {
        SfBuffer {
            config,
            entries: Vec::new(),
            pending_removed: Vec::new(),
        }
    }

    pub fn config(&self) -> &SfConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Held messages in broadcast order.
    pub fn entries(&self) -> &[BufferedMessage] {
        &self.entries
    }

    fn purge_expired(&mut self, now: SimTime) {
        let removed = &mut self.pending_removed;
        self.entries.retain(|e| {
            if e.msg.expiry > now {
                return true;
            }
            removed.push(Removal {
                msg_id: e.msg.msg_id,
                at: now,
                reason: RemovalReason::Expired {
                    broadcasts_done: e.broadcasts_done,
                    under_redundancy: e.broadcasts_done < e.msg.redundancy,
                },
            });
            false
        });
    }

    pub fn enqueue(&mut self, msg: V2iMessage, now: SimTime) -> Enqueue {
        if msg.expiry <= now {
            return Enqueue::Rejected(RejectReason::Expired);
        }
        self.purge_expired(now);
        if self.entries.iter().any(|e| e.msg.msg_id == msg.msg_id) {
            return Enqueue::Rejected(RejectReason::Duplicate);
        }
        let mut evicted = None;
        if self.entries.len() >= self.config.capacity {
            let Some(lowest) = self.entries.iter().map(|e| e.msg.priority).min() else {
                return Enqueue::Rejected(RejectReason::Capacity);
            };
            if lowest >= msg.priority {
                return Enqueue::Rejected(RejectReason::Capacity);
            }
            // Among the lowest priority, drop the one that would live longest.
            let victim = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.msg.priority == lowest)
                .max_by_key(|(_, e)| (e.msg.expiry, e.msg.msg_id))
                .map(|(i, _)| i)
                .expect("buffer is non-empty");
            evicted = Some(self.entries.remove(victim).msg.msg_id);
        }
        let entry = BufferedMessage {
            msg,
            broadcasts_done: 0,
            next_broadcast_at: now,
        };
        let pos = self
            .entries
            .binary_search_by_key(&entry.key(), BufferedMessage::key)
            .unwrap_or_else(|p| p);
        self.entries.insert(pos, entry);
        Enqueue::Accepted { evicted }
    }

    /// One distribution round at `now`.
    pub fn tick(&mut self, neighbor_count: usize, load: ChannelLoad, now: SimTime) -> TickOutcome {
        self.purge_expired(now);
        let mut out = TickOutcome {
            broadcasts: Vec::new(),
            removed: core::mem::take(&mut self.pending_removed),
        };
        if neighbor_count == 0 {
            return out;
        }
        let mut budget = load.budget(self.config.max_frames_per_tick);
        let period = self.config.period;
        let mut i = 0;
        while i < self.entries.len() && budget > 0 {
            let e = &mut self.entries[i];
            if e.next_broadcast_at > now {
                i += 1;
                continue;
            }
            e.broadcasts_done += 1;
            e.next_broadcast_at = now + period;
            budget -= 1;
            out.broadcasts.push(Broadcast {
                msg_id: e.msg.msg_id,
                at: now,
                nth: e.broadcasts_done,
                size: e.msg.size,
                priority: e.msg.priority,
                msg_type: e.msg.msg_type,
                origin: e.msg.origin,
            });
            if e.broadcasts_done >= e.msg.redundancy {
                out.removed.push(Removal {
                    msg_id: e.msg.msg_id,
                    at: now,
                    reason: RemovalReason::Completed,
                });
                self.entries.remove(i);
            } else {
                i += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn msg(id: u64, prio: u8, expiry_s: u64, redundancy: u32) -> V2iMessage {
        V2iMessage::new(
            id,
            MsgType::DenmLike,
            prio,
            200,
            SimTime::ZERO,
            SimTime::from_secs(expiry_s),
            redundancy,
            Origin::Center,
        )
        .unwrap()
    }

    fn cfg(period_s: u64) -> SfConfig {
        SfConfig {
            capacity: 4,
            period: Duration::from_secs(period_s),
            max_frames_per_tick: 10,
        }
    }

    fn run_ticks(buf: &mut SfBuffer, every: u64, until: u64) -> (Vec<u64>, Vec<Removal>) {
        let mut sent = vec![];
        let mut removed = vec![];
        let mut t = 0;
        while t <= until {
            let out = buf.tick(3, ChannelLoad::IDLE, SimTime::from_secs(t));
            sent.extend(out.broadcasts.iter().map(|b| b.at.as_micros() / 1_000_000));
            removed.extend(out.removed);
            t += every;
        }
        (sent, removed)
    }

    #[test]
    fn redundancy_met_then_removed() {
        let mut b = SfBuffer::new(cfg(2));
        assert_eq!(b.enqueue(msg(1, 10, 10, 3), SimTime::ZERO), Enqueue::Accepted { evicted: None });
        let (sent, removed) = run_ticks(&mut b, 2, 10);
        assert_eq!(sent, [0, 2, 4]);
        assert_eq!(removed, [Removal { msg_id: 1, at: SimTime::from_secs(4), reason: RemovalReason::Completed }]);
        assert!(b.is_empty());
    }

    #[test]
    fn expiry_cuts_redundancy_short() {
        let mut b = SfBuffer::new(cfg(2));
        b.enqueue(msg(1, 10, 3, 3), SimTime::ZERO);
        let (sent, removed) = run_ticks(&mut b, 2, 6);
        assert_eq!(sent, [0, 2]);
        assert_eq!(
            removed,
            [Removal {
                msg_id: 1,
                at: SimTime::from_secs(4),
                reason: RemovalReason::Expired { broadcasts_done: 2, under_redundancy: true },
            }]
        );
    }

    #[test]
    fn saturated_channel_sends_nothing_and_keeps_messages() {
        let mut b = SfBuffer::new(cfg(1));
        b.enqueue(msg(1, 10, 5, 1), SimTime::ZERO);
        let out = b.tick(3, ChannelLoad::from_fraction(1.0), SimTime::ZERO);
        assert!(out.broadcasts.is_empty() && out.removed.is_empty());
        assert_eq!(b.len(), 1);
        assert_eq!(ChannelLoad::from_fraction(0.35).budget(10), 6);
    }

    #[test]
    fn no_neighbors_defers() {
        let mut b = SfBuffer::new(cfg(1));
        b.enqueue(msg(1, 10, 5, 1), SimTime::ZERO);
        assert!(b.tick(0, ChannelLoad::IDLE, SimTime::ZERO).broadcasts.is_empty());
        assert_eq!(b.tick(1, ChannelLoad::IDLE, SimTime::from_secs(1)).broadcasts.len(), 1);
    }

    #[test]
    fn expired_on_arrival() {
        let mut b = SfBuffer::new(cfg(1));
        assert_eq!(b.enqueue(msg(1, 10, 5, 1), SimTime::from_secs(6)), Enqueue::Rejected(RejectReason::Expired));
    }

    #[test]
    fn capacity_eviction_rule() {
        let mut b = SfBuffer::new(cfg(1));
        for (id, exp) in [(1, 10), (2, 30), (3, 20), (4, 15)] {
            b.enqueue(msg(id, 200, exp, 1), SimTime::ZERO);
        }
        assert_eq!(b.enqueue(msg(5, 100, 10, 1), SimTime::ZERO), Enqueue::Rejected(RejectReason::Capacity));
        assert_eq!(b.enqueue(msg(6, 200, 10, 1), SimTime::ZERO), Enqueue::Rejected(RejectReason::Capacity));
        // Latest-expiring prio-200 entry (id 2) goes.
        assert_eq!(b.enqueue(msg(7, 250, 10, 1), SimTime::ZERO), Enqueue::Accepted { evicted: Some(2) });
        let order: Vec<u64> = b.entries().iter().map(|e| e.msg.msg_id).collect();
        assert_eq!(order, [7, 1, 4, 3]);
    }
}
