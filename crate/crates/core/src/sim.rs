//! Deterministic discrete-event kernel.
//!
//! Time is an integer count of virtual milliseconds. Events fire in
//! `(fire_time, sequence)` order, where `sequence` is the insertion counter, so
//! two events scheduled for the same instant fire in the order they were
//! scheduled. Nothing in here reads the wall clock.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Virtual milliseconds since simulation start.
pub type Millis = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule event at {at} ms, clock is already at {now} ms")]
    PastTime { at: Millis, now: Millis },
    #[error("cannot run until {end} ms, clock is already at {now} ms")]
    EndInPast { end: Millis, now: Millis },
}

/// Handle returned by [`Kernel::schedule`]; usable with [`Kernel::cancel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Millis,
}

impl VirtualClock {
    pub fn now(&self) -> Millis {
        self.now
    }

    fn advance_to(&mut self, t: Millis) {
        debug_assert!(t >= self.now, "clock moved backwards");
        self.now = self.now.max(t);
    }
}

struct Scheduled<E> {
    at: Millis,
    seq: u64,
    payload: E,
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
    // BinaryHeap is a max-heap; reverse so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Counters used to check that no event is lost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub scheduled: u64,
    pub fired: u64,
    pub cancelled: u64,
}

/// Ordered event queue plus virtual clock.
pub struct Kernel<E> {
    clock: VirtualClock,
    heap: BinaryHeap<Scheduled<E>>,
    cancelled: HashSet<u64>,
    next_seq: u64,
    stats: KernelStats,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Self {
            clock: VirtualClock::default(),
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_seq: 0,
            stats: KernelStats::default(),
        }
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn stats(&self) -> KernelStats {
        self.stats
    }

    /// Number of live (not cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, at: Millis, payload: E) -> Result<EventId, SimError> {
        let now = self.clock.now();
        if at < now {
            return Err(SimError::PastTime { at, now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { at, seq, payload });
        self.stats.scheduled += 1;
        Ok(EventId(seq))
    }

    /// Schedule relative to the current instant.
    pub fn schedule_in(&mut self, delay: Millis, payload: E) -> EventId {
        let at = self.clock.now().saturating_add(delay);
        self.schedule(at, payload)
            .expect("relative schedule is never in the past")
    }

    /// Cancel a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq || self.cancelled.contains(&id.0) {
            return false;
        }
        if !self.heap.iter().any(|s| s.seq == id.0) {
            return false;
        }
        self.cancelled.insert(id.0);
        self.stats.cancelled += 1;
        true
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.cancelled.remove(&top.seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Fire time of the next live event.
    pub fn peek_time(&mut self) -> Option<Millis> {
        self.skip_cancelled();
        self.heap.peek().map(|s| s.at)
    }

    /// Pop the next live event and advance the clock to its fire time.
    pub fn pop(&mut self) -> Option<(EventId, E)> {
        self.skip_cancelled();
        let next = self.heap.pop()?;
        self.clock.advance_to(next.at);
        self.stats.fired += 1;
        Some((EventId(next.seq), next.payload))
    }

    /// Dispatch every event with `fire_time <= end` to `handler`, in order.
    /// The handler may schedule further events. Afterwards the clock sits at
    /// `end`.
    pub fn run_until<F>(&mut self, end: Millis, mut handler: F) -> Result<Millis, SimError>
    where
        F: FnMut(&mut Kernel<E>, EventId, E),
    {
        let now = self.clock.now();
        if end < now {
            return Err(SimError::EndInPast { end, now });
        }
        while let Some(at) = self.peek_time() {
            if at > end {
                break;
            }
            let (id, payload) = self.pop().expect("peeked event exists");
            handler(self, id, payload);
        }
        self.clock.advance_to(end);
        Ok(self.clock.now())
    }

    /// Cancel everything still queued; used when a simulation finishes early.
    pub fn cancel_all(&mut self) -> u64 {
        let mut n = 0;
        while let Some(s) = self.heap.pop() {
            if !self.cancelled.remove(&s.seq) {
                n += 1;
            }
        }
        self.stats.cancelled += n;
        n
    }
}

/// Seed plus named substreams. Each subsystem draws from its own ChaCha8
/// stream derived from `(seed, name)`, so one subsystem consuming more or
/// fewer numbers never shifts another's sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
}

impl SeededRng {
    pub const ARRIVALS: &'static str = "arrivals";
    pub const HANGS: &'static str = "hangs";
    pub const REAPER: &'static str = "reaper";
    pub const SESSION: &'static str = "session";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn schedule_at_now_fires_before_later_events() {
        let mut k = Kernel::new();
        k.schedule(10, "later").unwrap();
        k.schedule(0, "now").unwrap();
        assert_eq!(k.pop().unwrap().1, "now");
        assert_eq!(k.pop().unwrap().1, "later");
    }

    #[test]
    fn same_time_events_fire_fifo() {
        let mut k = Kernel::new();
        for i in 0..5 {
            k.schedule(1000, i).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| k.pop().map(|e| e.1)).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn past_time_rejected() {
        let mut k = Kernel::new();
        k.schedule(50, ()).unwrap();
        k.pop();
        assert_eq!(k.schedule(10, ()), Err(SimError::PastTime { at: 10, now: 50 }));
    }

    #[test]
    fn reaper_tick_chain() {
        let mut k = Kernel::new();
        k.schedule(5000, ()).unwrap();
        let mut ticks = Vec::new();
        k.run_until(20_000, |k, _, ()| {
            ticks.push(k.now());
            k.schedule_in(5000, ());
        })
        .unwrap();
        assert_eq!(ticks, vec![5000, 10_000, 15_000, 20_000]);
    }

    #[test]
    fn empty_run_until_moves_clock() {
        let mut k: Kernel<()> = Kernel::new();
        assert_eq!(k.run_until(60_000, |_, _, _| {}).unwrap(), 60_000);
    }

    #[test]
    fn cancel_and_accounting() {
        let mut k = Kernel::new();
        let a = k.schedule(1, 'a').unwrap();
        let _b = k.schedule(2, 'b').unwrap();
        let c = k.schedule(3, 'c').unwrap();
        assert!(k.cancel(a));
        assert!(!k.cancel(a));
        assert_eq!(k.pop().unwrap().1, 'b');
        assert_eq!(k.pending(), 1);
        k.cancel_all();
        assert!(!k.cancel(c));
        let s = k.stats();
        assert_eq!(s.scheduled, s.fired + s.cancelled);
    }

    #[test]
    fn substreams_are_independent_and_reproducible() {
        let r = SeededRng::new(7);
        let mut a1 = r.substream("arrivals");
        let mut a2 = r.substream("arrivals");
        let mut h = r.substream("hangs");
        let x: Vec<u64> = (0..4).map(|_| a1.gen()).collect();
        let y: Vec<u64> = (0..4).map(|_| a2.gen()).collect();
        let z: Vec<u64> = (0..4).map(|_| h.gen()).collect();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
