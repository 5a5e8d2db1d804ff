//! CSMA/CA contention state and baseline rate control.
//!
//! This module holds the pure pieces of the MAC: the contention-window and
//! retry bookkeeping of DCF, the success-run rate adaptation used by
//! baseline devices, packet and counter types. The event-driven glue (who
//! freezes when, ACK timers, queues) lives in [`crate::world`].

use std::collections::VecDeque;

use crate::kernel::SimTime;
use crate::rng::RngStream;

pub const CW_MIN: u32 = 15;
pub const CW_MAX: u32 = 1023;
/// A packet is dropped once `retries` exceeds this.
pub const RETRY_LIMIT: u32 = 7;
pub const QUEUE_CAP: usize = 256;
pub const RATE_START_MCS: usize = 3;
pub const RATE_UP_AFTER: u32 = 10;
pub const RATE_DOWN_AFTER: u32 = 2;

/// What a contending device does at an idle slot boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotDecision {
    /// Channel busy: keep the remaining backoff.
    Freeze,
    /// Counted one idle slot down.
    Decrement,
    /// Backoff hit zero: transmit now.
    TransmitNow,
}

/// Per-attempt transmission outcome as seen by the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxOutcome {
    Acked,
    AckTimeout,
}

/// Contention window, backoff counter, and retry count of one device.
#[derive(Debug, Clone)]
pub struct DcfState {
    pub cw: u32,
    pub backoff: u32,
    pub retries: u32,
}

impl Default for DcfState {
    fn default() -> Self {
        Self::new()
    }
}

impl DcfState {
    pub fn new() -> Self {
        DcfState { cw: CW_MIN, backoff: 0, retries: 0 }
    }

    /// Uniform integer backoff from `[0, cw]`.
    pub fn draw_backoff(&mut self, rng: &mut RngStream) {
        self.backoff = rng.uniform_int(self.cw);
    }

    pub fn on_slot_edge(&mut self, busy: bool) -> SlotDecision {
        if busy {
            SlotDecision::Freeze
        } else if self.backoff > 0 {
            self.backoff -= 1;
            SlotDecision::Decrement
        } else {
            SlotDecision::TransmitNow
        }
    }

    /// Successful exchange: window and retry count reset.
    pub fn on_ack(&mut self) {
        self.cw = CW_MIN;
        self.retries = 0;
    }

    /// Missing ACK: window doubles (capped), retry count grows. Returns
    /// true when the retry limit is exhausted and the packet must be
    /// dropped; the state is then reset for the next packet.
    pub fn on_ack_timeout(&mut self) -> bool {
        self.cw = (2 * self.cw + 1).min(CW_MAX);
        self.retries += 1;
        if self.retries > RETRY_LIMIT {
            self.cw = CW_MIN;
            self.retries = 0;
            true
        } else {
            false
        }
    }
}

/// Success-run rate adaptation: a string of ACKs steps the MCS up, a pair
/// of consecutive failures steps it down.
#[derive(Debug, Clone)]
pub struct RateCtl {
    pub mcs: usize,
    consec_ok: u32,
    consec_fail: u32,
    max_mcs: usize,
}

impl RateCtl {
    pub fn new(max_mcs: usize) -> Self {
        RateCtl {
            mcs: RATE_START_MCS.min(max_mcs),
            consec_ok: 0,
            consec_fail: 0,
            max_mcs,
        }
    }

    pub fn on_outcome(&mut self, acked: bool) {
        if acked {
            self.consec_fail = 0;
            self.consec_ok += 1;
            if self.consec_ok >= RATE_UP_AFTER {
                self.consec_ok = 0;
                self.mcs = (self.mcs + 1).min(self.max_mcs);
            }
        } else {
            self.consec_ok = 0;
            self.consec_fail += 1;
            if self.consec_fail >= RATE_DOWN_AFTER {
                self.consec_fail = 0;
                self.mcs = self.mcs.saturating_sub(1);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flow {
    Uplink,
    Downlink,
}

impl Flow {
    pub fn label(self) -> &'static str {
        match self {
            Flow::Uplink => "up",
            Flow::Downlink => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    Data,
    Mgmt,
}

/// One MSDU waiting in (or at the head of) a transmit queue.
#[derive(Debug, Clone)]
pub struct Packet {
    pub id: u64,
    pub bytes: u32,
    pub created: SimTime,
    pub kind: PacketKind,
    pub src: usize,
    pub dst: Option<usize>,
    /// Set when the packet belongs to one of the measured DUT flows.
    pub flow: Option<Flow>,
}

/// Sender-side accounting. Packet conservation holds exactly:
/// `generated == delivered + dropped_retry + dropped_overflow + residual`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounters {
    pub generated: u64,
    /// Packets that left the queue successfully (ACKed, or sent for
    /// unacknowledged management frames).
    pub delivered: u64,
    pub dropped_retry: u64,
    pub dropped_overflow: u64,
    pub tx_attempts: u64,
    pub ack_timeouts: u64,
    pub rx_delivered: u64,
    pub airtime_us: u64,
    pub airtime_success_us: u64,
}

impl MacCounters {
    pub fn conserved(&self, residual: u64) -> bool {
        self.generated
            == self.delivered + self.dropped_retry + self.dropped_overflow + residual
    }
}

/// FIFO transmit queue with a hard cap; overflow is reported (and counted
/// by the caller as loss).
#[derive(Debug, Default)]
pub struct TxQueue {
    q: VecDeque<Packet>,
}

impl TxQueue {
    pub fn push(&mut self, packet: Packet) -> Result<(), Packet> {
        if self.q.len() >= QUEUE_CAP {
            Err(packet)
        } else {
            self.q.push_back(packet);
            Ok(())
        }
    }

    pub fn pop(&mut self) -> Option<Packet> {
        self.q.pop_front()
    }

    pub fn front(&self) -> Option<&Packet> {
        self.q.front()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    #[test]
    fn slot_edge_semantics() {
        let mut s = DcfState::new();
        s.backoff = 2;
        assert_eq!(s.on_slot_edge(true), SlotDecision::Freeze);
        assert_eq!(s.backoff, 2, "freeze keeps the counter");
        assert_eq!(s.on_slot_edge(false), SlotDecision::Decrement);
        assert_eq!(s.backoff, 1);
        assert_eq!(s.on_slot_edge(false), SlotDecision::Decrement);
        assert_eq!(s.on_slot_edge(false), SlotDecision::TransmitNow);
        assert_eq!(s.backoff, 0);
    }

    #[test]
    fn window_doubles_and_caps() {
        let mut s = DcfState::new();
        let mut seen = vec![s.cw];
        for _ in 0..7 {
            s.on_ack_timeout();
            seen.push(s.cw);
        }
        assert_eq!(seen, vec![15, 31, 63, 127, 255, 511, 1023, 1023]);
        s.on_ack();
        assert_eq!((s.cw, s.retries), (CW_MIN, 0));
    }

    #[test]
    fn eighth_timeout_drops_the_packet() {
        let mut s = DcfState::new();
        for i in 1..=7 {
            assert!(!s.on_ack_timeout(), "timeout {i} must not drop yet");
        }
        assert!(s.on_ack_timeout(), "8th consecutive timeout drops");
        assert_eq!((s.cw, s.retries), (CW_MIN, 0), "state resets after drop");
    }

    #[test]
    fn backoff_draw_is_bounded_and_centered() {
        let mut rng = RngStreams::new(3).stream("backoff");
        let mut s = DcfState::new();
        s.cw = 1;
        for _ in 0..200 {
            s.draw_backoff(&mut rng);
            assert!(s.backoff <= 1);
        }
        s.cw = 15;
        let n = 1_000_000;
        let mut sum = 0u64;
        for _ in 0..n {
            s.draw_backoff(&mut rng);
            assert!(s.backoff <= 15);
            sum += s.backoff as u64;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 7.5).abs() < 0.05, "mean={mean}");
    }

    #[test]
    fn rate_adapt_steps_up_after_ten_and_down_after_two() {
        let mut r = RateCtl::new(11);
        assert_eq!(r.mcs, 3);
        for _ in 0..9 {
            r.on_outcome(true);
        }
        assert_eq!(r.mcs, 3, "nine in a row is not enough");
        r.on_outcome(true);
        assert_eq!(r.mcs, 4);
        r.on_outcome(false);
        assert_eq!(r.mcs, 4, "a single failure keeps the rate");
        r.on_outcome(false);
        assert_eq!(r.mcs, 3, "two consecutive failures step down");
        // An interleaved success resets the failure run.
        r.on_outcome(false);
        r.on_outcome(true);
        r.on_outcome(false);
        assert_eq!(r.mcs, 3);
    }

    #[test]
    fn rate_adapt_saturates_at_both_ends() {
        let mut r = RateCtl::new(11);
        for _ in 0..200 {
            r.on_outcome(true);
        }
        assert_eq!(r.mcs, 11);
        for _ in 0..200 {
            r.on_outcome(false);
        }
        assert_eq!(r.mcs, 0);
    }

    #[test]
    fn queue_caps_at_256() {
        let mut q = TxQueue::default();
        let pkt = Packet {
            id: 0,
            bytes: 100,
            created: SimTime::ZERO,
            kind: PacketKind::Data,
            src: 0,
            dst: Some(1),
            flow: None,
        };
        for i in 0..QUEUE_CAP {
            assert!(q.push(Packet { id: i as u64, ..pkt.clone() }).is_ok());
        }
        assert!(q.push(pkt.clone()).is_err(), "overflow must be reported");
        assert_eq!(q.len(), QUEUE_CAP);
        assert_eq!(q.pop().unwrap().id, 0, "FIFO order");
    }

    #[test]
    fn counters_conservation_identity() {
        let c = MacCounters {
            generated: 10,
            delivered: 5,
            dropped_retry: 2,
            dropped_overflow: 1,
            ..Default::default()
        };
        assert!(c.conserved(2));
        assert!(!c.conserved(3));
    }
}
