//! Deterministic event queue over virtual time.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::time::Duration;

use crate::time::SimTime;

struct Scheduled<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

/// Pending events ordered by `(time, insertion sequence)`.
pub struct VirtualClock<E> {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled<E>>,
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        VirtualClock {
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
        }
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Events in the past are clamped to `now`.
    pub fn schedule_at(&mut self, at: SimTime, event: E) {
        let at = at.max(self.now);
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    pub fn schedule_in(&mut self, delay: Duration, event: E) {
        self.schedule_at(self.now + delay, event);
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|s| s.at)
    }

    /// Pops the next event due at or before `until`, moving `now` to it.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        if self.queue.peek()?.at > until {
            return None;
        }
        let s = self.queue.pop()?;
        self.now = s.at;
        Some((s.at, s.event))
    }

    /// Runs every event due by `until` through `handler`, which may schedule
    /// more. Leaves `now == until`.
    pub fn run_until<F>(&mut self, until: SimTime, mut handler: F)
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        while let Some((at, ev)) = self.pop_until(until) {
            handler(self, at, ev);
        }
        self.now = self.now.max(until);
    }

    /// Drains every event due by `until` without handling.
    pub fn advance(&mut self, until: SimTime) -> Vec<(SimTime, E)> {
        let mut out = Vec::new();
        while let Some(x) = self.pop_until(until) {
            out.push(x);
        }
        self.now = self.now.max(until);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_advance_moves_now() {
        let mut c: VirtualClock<u8> = VirtualClock::new();
        assert!(c.advance(SimTime::from_secs(5)).is_empty());
        assert_eq!(c.now(), SimTime::from_secs(5));
    }

    #[test]
    fn ties_run_in_insertion_order() {
        let mut c = VirtualClock::new();
        c.schedule_at(SimTime::from_secs(2), "b");
        c.schedule_at(SimTime::from_secs(1), "a");
        c.schedule_at(SimTime::from_secs(2), "c");
        c.schedule_at(SimTime::from_secs(3), "late");
        let got: Vec<&str> = c.advance(SimTime::from_secs(2)).into_iter().map(|x| x.1).collect();
        assert_eq!(got, ["a", "b", "c"]);
        assert_eq!(c.pending(), 1);
    }

    #[test]
    fn handler_can_schedule_follow_ups() {
        let mut c = VirtualClock::new();
        c.schedule_at(SimTime::ZERO, 0u32);
        let mut seen = vec![];
        c.run_until(SimTime::from_secs(10), |c, at, n| {
            seen.push((at.as_micros() / 1_000_000, n));
            if n < 3 {
                c.schedule_in(Duration::from_secs(4), n + 1);
            }
        });
        assert_eq!(seen, [(0, 0), (4, 1), (8, 2)]);
        assert_eq!(c.pending(), 1);
    }

    #[test]
    fn never_runs_early() {
        let mut c = VirtualClock::new();
        c.advance(SimTime::from_secs(5));
        c.schedule_at(SimTime::from_secs(1), ());
        let (at, ()) = c.pop_until(SimTime::from_secs(5)).unwrap();
        assert_eq!(at, SimTime::from_secs(5));
    }
}
