//! PHY abstractions: rate table, airtime, path loss, error model.
//!
//! Propagation is log-distance path loss with reference loss 46.7 dB at 1 m
//! and exponent 3.0. Frame error probability is a logistic curve in SNR
//! around a per-MCS 50% threshold. Airtime is a fixed preamble plus payload
//! bits rounded up to whole OFDM symbols. All of it is deliberately small:
//! enough physics for contention, capture, and rate adaptation to matter,
//! nothing more.

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

/// One modulation-and-coding choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: u8,
    /// PHY data rate in bits per microsecond (equals Mb/s).
    pub data_rate: f64,
    /// SNR in dB at which half of the frames fail.
    pub snr50: f64,
}

/// 80 MHz, single spatial stream, 0.8 us guard interval rate set, with
/// decode thresholds spaced 3 dB starting at 2 dB.
pub const DEFAULT_MCS_TABLE: [McsEntry; 12] = [
    McsEntry { index: 0, data_rate: 36.0, snr50: 2.0 },
    McsEntry { index: 1, data_rate: 72.1, snr50: 5.0 },
    McsEntry { index: 2, data_rate: 108.1, snr50: 8.0 },
    McsEntry { index: 3, data_rate: 144.1, snr50: 11.0 },
    McsEntry { index: 4, data_rate: 216.2, snr50: 14.0 },
    McsEntry { index: 5, data_rate: 288.2, snr50: 17.0 },
    McsEntry { index: 6, data_rate: 324.3, snr50: 20.0 },
    McsEntry { index: 7, data_rate: 360.3, snr50: 23.0 },
    McsEntry { index: 8, data_rate: 432.4, snr50: 26.0 },
    McsEntry { index: 9, data_rate: 480.4, snr50: 29.0 },
    McsEntry { index: 10, data_rate: 540.4, snr50: 32.0 },
    McsEntry { index: 11, data_rate: 600.5, snr50: 35.0 },
];

pub const NUM_MCS: usize = 12;

/// Channel and timing constants. Everything a scenario file may override
/// lives here; the defaults describe the single 80 MHz channel used
/// throughout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhyParams {
    pub noise_dbm: f64,
    pub cca_threshold_dbm: f64,
    pub capture_db: f64,
    pub path_loss_ref_db: f64,
    pub path_loss_exponent: f64,
    pub per_slope_db: f64,
    pub preamble_us: f64,
    pub symbol_us: f64,
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub ack_airtime_us: u64,
    /// Extra slack after the expected ACK end before the sender gives up.
    pub ack_timeout_slack_us: u64,
    pub ap_tx_power_dbm: f64,
    pub sta_tx_power_dbm: f64,
    pub mcs: Vec<McsEntry>,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            noise_dbm: -94.0,
            cca_threshold_dbm: -82.0,
            capture_db: 10.0,
            path_loss_ref_db: 46.7,
            path_loss_exponent: 3.0,
            per_slope_db: 1.0,
            preamble_us: 40.0,
            symbol_us: 13.6,
            slot_us: 9,
            sifs_us: 16,
            difs_us: 34,
            ack_airtime_us: 32,
            ack_timeout_slack_us: 9,
            ap_tx_power_dbm: 20.0,
            sta_tx_power_dbm: 15.0,
            mcs: DEFAULT_MCS_TABLE.to_vec(),
        }
    }
}

impl PhyParams {
    /// Log-distance path loss in dB; distances below 0.1 m are clamped.
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(0.1);
        self.path_loss_ref_db + 10.0 * self.path_loss_exponent * d.log10()
    }

    /// Inverts [`Self::path_loss_db`]: the distance at which a transmitter
    /// at `tx_power_dbm` is received at `rssi_dbm`.
    pub fn distance_for_rssi(&self, tx_power_dbm: f64, rssi_dbm: f64) -> f64 {
        let loss = tx_power_dbm - rssi_dbm;
        10f64.powf((loss - self.path_loss_ref_db) / (10.0 * self.path_loss_exponent))
    }

    /// Frame duration: preamble plus payload rounded up to whole OFDM
    /// symbols, reported in whole microseconds (the clock granularity).
    pub fn frame_airtime_us(&self, mcs: McsEntry, payload_bytes: u32) -> u64 {
        let bits = 8.0 * payload_bytes as f64;
        let payload_us = bits / mcs.data_rate;
        // The guard keeps an exactly-integral symbol count from rounding up
        // through float noise.
        let symbols = (payload_us / self.symbol_us - 1e-9).ceil().max(0.0);
        (self.preamble_us + symbols * self.symbol_us).ceil() as u64
    }

    /// Frame error probability for `mcs` at the given SNR (or SINR) in dB.
    /// Logistic in SNR: 0.5 at `snr50`, falling as SNR grows.
    pub fn packet_error_rate(&self, mcs: McsEntry, snr_db: f64) -> f64 {
        1.0 / (1.0 + ((snr_db - mcs.snr50) / self.per_slope_db).exp())
    }

    pub fn tx_power_dbm(&self, role_is_ap: bool) -> f64 {
        if role_is_ap {
            self.ap_tx_power_dbm
        } else {
            self.sta_tx_power_dbm
        }
    }

    pub fn mcs_entry(&self, index: usize) -> McsEntry {
        self.mcs[index]
    }

    /// Rejects tables that are not strictly increasing in rate and
    /// threshold or that are not exactly the indices 0..N.
    pub fn validate(&self) -> Result<(), String> {
        if self.mcs.is_empty() {
            return Err("MCS table is empty".into());
        }
        for (i, e) in self.mcs.iter().enumerate() {
            if e.index as usize != i {
                return Err(format!("MCS index {} at position {i}", e.index));
            }
            if i > 0 {
                let prev = self.mcs[i - 1];
                if e.data_rate <= prev.data_rate || e.snr50 <= prev.snr50 {
                    return Err(format!(
                        "MCS table must be strictly increasing at index {i}"
                    ));
                }
            }
        }
        if self.slot_us == 0 || self.symbol_us <= 0.0 || self.preamble_us < 0.0 {
            return Err("non-positive timing constant".into());
        }
        Ok(())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Planar device position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    Data,
    Ack,
    Mgmt,
}

impl FrameKind {
    pub fn label(self) -> &'static str {
        match self {
            FrameKind::Data => "data",
            FrameKind::Ack => "ack",
            FrameKind::Mgmt => "mgmt",
        }
    }
}

/// One PPDU on the air. `dst` is `None` for broadcast management frames.
#[derive(Debug, Clone)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: usize,
    pub dst: Option<usize>,
    pub mcs: McsEntry,
    pub payload_bytes: u32,
    pub start: SimTime,
    pub end: SimTime,
}

// ---------------------------------------------------------------------------
