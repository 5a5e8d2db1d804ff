//! Event queue and simulated clock.
//!
//! Time is an integer count of microseconds. Events are totally ordered by
//! `(fire_at, seq)` where `seq` is the scheduling order, so simultaneous
//! events run in the order they were scheduled and a handler that schedules
//! a child at the current instant sees it run after every already-queued
//! event of that instant. Each episode owns one queue and runs on a single
//! thread; determinism needs no locks.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use crate::error::{Result, SimError};

/// Simulation timestamp in whole microseconds since episode start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    /// Elapsed microseconds since `earlier`, zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;

    /// Advances the timestamp by a duration in microseconds.
    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Ticket for a scheduled event; lets the scheduler cancel it later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Priority queue of pending events plus the simulated clock.
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    // Payloads keyed by seq; absence means the event was cancelled or ran.
    payloads: HashMap<u64, P>,
    next_seq: u64,
    now: SimTime,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            payloads: HashMap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events still pending (scheduled, not yet run or cancelled).
    pub fn pending(&self) -> usize {
        self.payloads.len()
    }

    /// Schedules `payload` to fire at `fire_at`. Scheduling in the past is a
    /// hard error: it can only come from broken handler logic.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<EventHandle> {
        if fire_at < self.now {
            return Err(SimError::SchedulePast {
                now: self.now,
                requested: fire_at,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((fire_at, seq)));
        self.payloads.insert(seq, payload);
        Ok(EventHandle(seq))
    }

    /// Cancels a pending event. A cancelled event never executes. Returns
    /// false (and does nothing) if the event already ran or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.payloads.remove(&handle.0).is_some()
    }

    /// Pops the next live event with `fire_at <= t_end` and advances the
    /// clock to its timestamp. Returns `None` once the queue holds nothing
    /// at or before `t_end`; the clock is then left at `t_end`.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, u64, P)> {
        assert!(t_end >= self.now, "pop_until called with t_end in the past");
        while let Some(Reverse((fire_at, seq))) = self.heap.peek().copied() {
            if fire_at > t_end {
                break;
            }
            self.heap.pop();
            if let Some(payload) = self.payloads.remove(&seq) {
                self.now = fire_at;
                return Some((fire_at, seq, payload));
            }
            // Cancelled: skip the stale heap entry.
        }
        self.now = t_end;
        None
    }

    /// Runs every event with `fire_at <= t_end` in `(fire_at, seq)` order,
    /// dispatching each to `handler`, and leaves the clock at `t_end`.
    /// Returns the number of events executed.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, SimTime, u64, P),
    {
        let mut executed = 0;
        while let Some((at, seq, payload)) = self.pop_until(t_end) {
            executed += 1;
            handler(self, at, seq, payload);
        }
        executed
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executes_in_time_then_seq_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(30), "c").unwrap();
        q.schedule(SimTime::from_micros(10), "a").unwrap();
        q.schedule(SimTime::from_micros(30), "d").unwrap();
        q.schedule(SimTime::from_micros(20), "b").unwrap();
        let mut seen = Vec::new();
        let n = q.run_until(SimTime::from_micros(100), |_, at, _, p| {
            seen.push((at.micros(), p));
        });
        assert_eq!(n, 4);
        assert_eq!(seen, vec![(10, "a"), (20, "b"), (30, "c"), (30, "d")]);
        assert_eq!(q.now(), SimTime::from_micros(100));
    }

    #[test]
    fn matches_reference_ordering_on_random_schedules() {
        // Oracle: an independently sorted (fire_at, seq) list must equal the
        // execution order produced by the heap.
        let mut rng = crate::rng::RngStreams::new(7).stream("kernel-order");
        for round in 0..50 {
            let mut q = EventQueue::new();
            let mut reference = Vec::new();
            for i in 0..200u64 {
                let at = SimTime::from_micros(rng.uniform_int(500) as u64);
                let h = q.schedule(at, i).unwrap();
                reference.push((at, h.0, i));
            }
            reference.sort_by_key(|&(at, seq, _)| (at, seq));
            let expected: Vec<u64> = reference.iter().map(|&(_, _, i)| i).collect();
            let mut got = Vec::new();
            q.run_until(SimTime::from_micros(1_000), |_, _, _, p| got.push(p));
            assert_eq!(got, expected, "round {round}");
        }
    }

    #[test]
    fn child_at_same_time_runs_after_queued_same_time_events() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(5), "first").unwrap();
        q.schedule(SimTime::from_micros(5), "second").unwrap();
        let mut seen = Vec::new();
        q.run_until(SimTime::from_micros(5), |q, at, _, p| {
            seen.push(p);
            if p == "first" {
                q.schedule(at, "child").unwrap();
            }
        });
        assert_eq!(seen, vec!["first", "second", "child"]);
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(10), ()).unwrap();
        q.run_until(SimTime::from_micros(10), |_, _, _, _| {});
        let err = q.schedule(SimTime::from_micros(9), ()).unwrap_err();
        assert!(matches!(err, SimError::SchedulePast { .. }));
        // Scheduling exactly at the current instant stays legal.
        q.schedule(SimTime::from_micros(10), ()).unwrap();
    }

    #[test]
    fn cancelled_events_never_execute_and_cancel_is_idempotent() {
        let mut q = EventQueue::new();
        let keep = q.schedule(SimTime::from_micros(1), "keep").unwrap();
        let drop = q.schedule(SimTime::from_micros(2), "drop").unwrap();
        assert!(q.cancel(drop));
        assert!(!q.cancel(drop), "second cancel must be a no-op");
        let mut seen = Vec::new();
        q.run_until(SimTime::from_micros(10), |_, _, _, p| seen.push(p));
        assert_eq!(seen, vec!["keep"]);
        assert!(!q.cancel(keep), "cancel after execution reports false");
    }

    #[test]
    fn clock_never_runs_backwards() {
        let mut rng = crate::rng::RngStreams::new(11).stream("kernel-clock");
        let mut q = EventQueue::new();
        for _ in 0..300 {
            let at = SimTime::from_micros(rng.uniform_int(1_000) as u64);
            q.schedule(at, ()).unwrap();
        }
        let mut last = SimTime::ZERO;
        q.run_until(SimTime::from_micros(2_000), |q, at, _, _| {
            assert!(at >= last);
            assert_eq!(q.now(), at);
            last = at;
        });
        assert_eq!(q.now(), SimTime::from_micros(2_000));
    }

    #[test]
    fn run_until_with_empty_queue_just_advances_the_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run_until(SimTime::from_micros(50), |_, _, _, _| {}), 0);
        assert_eq!(q.now(), SimTime::from_micros(50));
    }
}
