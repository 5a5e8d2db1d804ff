//! Shared-channel state: who is on the air, who hears whom.
//!
//! The medium tracks every in-flight frame. On each transmission start and
//! end it recomputes, per device, the aggregate received power from all
//! foreign frames; crossings of the CCA threshold are reported to the caller
//! so MACs can freeze and resume. Interference for decoding is accumulated
//! per frame as the conservative full-overlap sum: any frame that shares
//! airtime with a reception contributes its entire power to that
//! reception's SINR.

use crate::phy::{dbm_to_mw, mw_to_dbm, Frame, PhyParams, Position};
use crate::rng::RngStream;

/// Outcome of one reception attempt at a frame's destination.
#[derive(Debug, Clone, Copy)]
pub struct Delivery {
    pub delivered: bool,
    pub sinr_db: f64,
    /// True if any other frame overlapped this one at the receiver.
    pub had_overlap: bool,
    /// True if the destination was itself transmitting at some point during
    /// the frame (half-duplex radios cannot receive then).
    pub dst_was_busy: bool,
}

/// What the sensing observer learned from a foreign frame.
#[derive(Debug, Clone, Copy)]
pub struct ObserverDecode {
    pub decoded: bool,
    pub sinr_db: f64,
}

#[derive(Debug)]
pub struct TxEndReport {
    pub frame: Frame,
    pub delivery: Option<Delivery>,
    pub observer: Option<ObserverDecode>,
    /// Devices whose CCA state flipped when this frame left the air.
    pub cca_transitions: Vec<(usize, bool)>,
}

struct ActiveTx {
    id: u64,
    frame: Frame,
    /// Accumulated interference power (mW) at the frame's destination.
    interference_dst_mw: f64,
    /// Accumulated interference power (mW) at the sensing observer.
    interference_obs_mw: f64,
    dst_was_busy: bool,
    obs_was_busy: bool,
}

/// The single contention domain shared by all devices of an episode.
pub struct Medium {
    positions: Vec<Position>,
    tx_power_dbm: Vec<f64>,
    /// Device whose overheard traffic feeds channel sensing (the DUT).
    observer: usize,
    active: Vec<ActiveTx>,
    cca_busy: Vec<bool>,
    next_tx_id: u64,
}

impl Medium {
    pub fn new(positions: Vec<Position>, tx_power_dbm: Vec<f64>, observer: usize) -> Self {
        let n = positions.len();
        assert_eq!(n, tx_power_dbm.len());
        assert!(observer < n);
        Medium {
            positions,
            tx_power_dbm,
            observer,
            active: Vec::new(),
            cca_busy: vec![false; n],
            next_tx_id: 0,
        }
    }

    pub fn device_count(&self) -> usize {
        self.positions.len()
    }

    /// Received power at `to` for a transmission from `from`, in dBm.
    pub fn rx_power_dbm(&self, phy: &PhyParams, from: usize, to: usize) -> f64 {
        let d = self.positions[from].distance(self.positions[to]);
        self.tx_power_dbm[from] - phy.path_loss_db(d)
    }

    fn rx_power_mw(&self, phy: &PhyParams, from: usize, to: usize) -> f64 {
        dbm_to_mw(self.rx_power_dbm(phy, from, to))
    }

    /// Aggregate in-flight foreign power at `device`, in mW.
    fn aggregate_mw(&self, phy: &PhyParams, device: usize) -> f64 {
        self.active
            .iter()
            .filter(|tx| tx.frame.src != device)
            .map(|tx| self.rx_power_mw(phy, tx.frame.src, device))
            .sum()
    }

    /// Energy-detection carrier sense: busy when foreign in-flight power
    /// exceeds the CCA threshold.
    pub fn cca_busy(&self, phy: &PhyParams, device: usize) -> bool {
        self.aggregate_mw(phy, device) > dbm_to_mw(phy.cca_threshold_dbm)
    }

    fn refresh_cca(&mut self, phy: &PhyParams) -> Vec<(usize, bool)> {
        let mut transitions = Vec::new();
        for d in 0..self.positions.len() {
            let now_busy = self.cca_busy(phy, d);
            if now_busy != self.cca_busy[d] {
                self.cca_busy[d] = now_busy;
                transitions.push((d, now_busy));
            }
        }
        transitions
    }

    /// Puts a frame on the air. Returns its id plus CCA transitions caused
    /// by the added energy.
    pub fn tx_start(&mut self, phy: &PhyParams, frame: Frame) -> (u64, Vec<(usize, bool)>) {
        let id = self.next_tx_id;
        self.next_tx_id += 1;

        let positions = &self.positions;
        let txp = &self.tx_power_dbm;
        let rx_mw = |from: usize, to: usize| {
            let d = positions[from].distance(positions[to]);
            dbm_to_mw(txp[from] - phy.path_loss_db(d))
        };

        let observer = self.observer;
        let mut interference_dst_mw = 0.0;
        let mut interference_obs_mw = 0.0;
        let mut dst_was_busy = false;
        for other in &mut self.active {
            // The new frame degrades every in-flight reception...
            if let Some(dst) = other.frame.dst {
                if dst != frame.src {
                    other.interference_dst_mw += rx_mw(frame.src, dst);
                } else {
                    // ...and a destination that starts transmitting loses
                    // the frame outright.
                    other.dst_was_busy = true;
                }
            }
            if frame.src == observer && other.frame.src != observer {
                other.obs_was_busy = true;
            } else if other.frame.src != observer {
                other.interference_obs_mw += rx_mw(frame.src, observer);
            }
            // ...and symmetrically, in-flight frames degrade the new one.
            if let Some(dst) = frame.dst {
                if other.frame.src != dst {
                    interference_dst_mw += rx_mw(other.frame.src, dst);
                } else {
                    dst_was_busy = true;
                }
            }
            if other.frame.src != observer && frame.src != observer {
                interference_obs_mw += rx_mw(other.frame.src, observer);
            }
        }
        if let Some(dst) = frame.dst {
            if self.active.iter().any(|tx| tx.frame.src == dst) {
                dst_was_busy = true;
            }
        }
        let obs_was_busy = frame.src != self.observer
            && self.active.iter().any(|tx| tx.frame.src == self.observer);

        self.active.push(ActiveTx {
            id,
            frame,
            interference_dst_mw,
            interference_obs_mw,
            dst_was_busy,
            obs_was_busy,
        });
        (id, self.refresh_cca(phy))
    }

    /// Takes a frame off the air and decides its fate at the destination
    /// and at the observer.
    pub fn tx_end(&mut self, phy: &PhyParams, tx_id: u64, rng: &mut RngStream) -> TxEndReport {
        let idx = self
            .active
            .iter()
            .position(|tx| tx.id == tx_id)
            .expect("tx_end for unknown transmission");
        let tx = self.active.swap_remove(idx);
        let noise_mw = dbm_to_mw(phy.noise_dbm);

        let delivery = tx.frame.dst.map(|dst| {
            let signal_mw = self.rx_power_mw(phy, tx.frame.src, dst);
            let sinr_db = mw_to_dbm(signal_mw / (noise_mw + tx.interference_dst_mw));
            let had_overlap = tx.interference_dst_mw > 0.0;
            let captured = !had_overlap || sinr_db >= phy.capture_db;
            let delivered = if tx.dst_was_busy || !captured {
                false
            } else {
                let p_success = 1.0 - phy.packet_error_rate(tx.frame.mcs, sinr_db);
                rng.next_uniform() < p_success
            };
            Delivery { delivered, sinr_db, had_overlap, dst_was_busy: tx.dst_was_busy }
        });

        let observer = if tx.frame.src == self.observer {
            None
        } else {
            let signal_mw = self.rx_power_mw(phy, tx.frame.src, self.observer);
            let sinr_db = mw_to_dbm(signal_mw / (noise_mw + tx.interference_obs_mw));
            // Sensing decode is deterministic: good SINR and a quiet radio.
            let decoded = !tx.obs_was_busy && sinr_db >= phy.capture_db;
            Some(ObserverDecode { decoded, sinr_db })
        };

        TxEndReport {
            frame: tx.frame,
            delivery,
            observer,
            cca_transitions: self.refresh_cca(phy),
        }
    }
}

// ---------------------------------------------------------------------------
