//! Observations, action selection, and experience assembly for the two
//! on-device agents.
//!
//! The access agent sees a stacked window of channel and service features
//! and chooses to seize or skip an idle slot; the rate agent sees link
//! statistics and picks the modulation for each attempt. Neither sees the
//! other, or the global picture: that joint view exists only in the
//! [`GlobalState`] recorded for centralized training. A [`DeviceAgent`]
//! stitches consecutive decisions into training transitions, folding all
//! local reward uploads that arrived in between into one scalar.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::reward::{QosSnapshot, RewardTerms, SensingStats, ServiceFeatures};
use crate::rng::RngStream;

pub const CA_OBS_DIM: usize = 9;
pub const RC_OBS_DIM: usize = 3;
/// Consecutive observations stacked into one network input.
pub const OBS_STACK: usize = 4;
pub const CA_INPUT_DIM: usize = CA_OBS_DIM * OBS_STACK;
pub const RC_INPUT_DIM: usize = RC_OBS_DIM * OBS_STACK;
pub const GLOBAL_STATE_DIM: usize = 12;
pub const CA_ACTIONS: usize = 2;
pub const RC_ACTIONS: usize = crate::phy::NUM_MCS;

/// Normalization scales for the raw observation inputs.
const SOURCES_NORM: f64 = 16.0;
const INTF_AIRTIME_NORM_MS: f64 = 10.0;
const WAIT_NORM_SLOTS: f64 = 64.0;
const SNR_NORM_DB: f64 = 40.0;
const AGE_CLAMP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaAction {
    Wait,
    Transmit,
}

impl CaAction {
    pub fn from_index(i: usize) -> CaAction {
        if i == 0 {
            CaAction::Wait
        } else {
            CaAction::Transmit
        }
    }

    pub fn index(self) -> usize {
        match self {
            CaAction::Wait => 0,
            CaAction::Transmit => 1,
        }
    }
}

/// What the access agent sees at one idle slot edge. All fields are
/// normalized to small ranges.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CaObs {
    pub busy: f64,
    pub observed_sources: f64,
    /// Age of the head-of-line packet, in delay bounds.
    pub delay_self: f64,
    /// Mean duration of overheard frames: how costly a deferral is.
    pub delay_intf: f64,
    /// Idle slots skipped since the last transmission, before this
    /// decision.
    pub waited_slots: f64,
    pub utilization: f64,
    pub qos_delay: f64,
    pub qos_jitter: f64,
    pub qos_loss: f64,
}

impl CaObs {
    pub fn build(
        busy: bool,
        sensing: &SensingStats,
        hol_age_ms: f64,
        waited_slots: u32,
        qos: QosSnapshot,
        delay_bound_ms: f64,
    ) -> CaObs {
        CaObs {
            busy: busy as u8 as f64,
            observed_sources: (sensing.observed_sources as f64 / SOURCES_NORM).min(1.0),
            delay_self: (hol_age_ms / delay_bound_ms).clamp(0.0, AGE_CLAMP),
            delay_intf: (sensing.mean_airtime_ms / INTF_AIRTIME_NORM_MS).min(1.0),
            waited_slots: (waited_slots as f64 / WAIT_NORM_SLOTS).min(2.0),
            utilization: sensing.utilization,
            qos_delay: qos.delay,
            qos_jitter: qos.jitter,
            qos_loss: qos.loss,
        }
    }

    pub fn to_vec(self) -> [f64; CA_OBS_DIM] {
        [
            self.busy,
            self.observed_sources,
            self.delay_self,
            self.delay_intf,
            self.waited_slots,
            self.utilization,
            self.qos_delay,
            self.qos_jitter,
            self.qos_loss,
        ]
    }
}

/// What the rate agent sees when a transmit vector is needed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcObs {
    pub recent_snr: f64,
    pub success_ratio: f64,
    pub queue_age: f64,
}

impl RcObs {
    pub fn build(snr_ewma_db: f64, success_ratio: f64, hol_age_ms: f64, delay_bound_ms: f64) -> RcObs {
        RcObs {
            recent_snr: (snr_ewma_db / SNR_NORM_DB).clamp(0.0, 1.5),
            success_ratio,
            queue_age: (hol_age_ms / delay_bound_ms).clamp(0.0, AGE_CLAMP),
        }
    }

    pub fn to_vec(self) -> [f64; RC_OBS_DIM] {
        [self.recent_snr, self.success_ratio, self.queue_age]
    }
}

/// Link statistics the rate agent's observation is built from. The SNR
/// estimate only updates on acknowledged frames (feedback rides on the
/// ACK), the success ratio on every outcome.
#[derive(Debug, Clone, Copy)]
pub struct RcTracker {
    pub snr_ewma_db: f64,
    pub success_ratio: f64,
    alpha: f64,
}

impl Default for RcTracker {
    fn default() -> Self {
        RcTracker { snr_ewma_db: 10.0, success_ratio: 1.0, alpha: 0.2 }
    }
}

impl RcTracker {
    pub fn on_outcome(&mut self, acked: bool, snr_db: Option<f64>) {
        self.success_ratio =
            (1.0 - self.alpha) * self.success_ratio + self.alpha * (acked as u8 as f64);
        if acked {
            if let Some(snr) = snr_db {
                self.snr_ewma_db = (1.0 - self.alpha) * self.snr_ewma_db + self.alpha * snr;
            }
        }
    }
}

/// The centralized training view: service violations, channel occupancy,
/// the joint action, and episode progress.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GlobalState {
    pub v_delay: f64,
    pub v_jitter: f64,
    pub v_loss: f64,
    pub utilization: f64,
    pub mgmt_fraction: f64,
    pub active_sources: f64,
    pub a_ca: f64,
    pub a_rc: f64,
    pub t_frac: f64,
    pub qos_delay: f64,
    pub qos_jitter: f64,
    pub qos_loss: f64,
}

impl GlobalState {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        features: ServiceFeatures,
        sensing: &SensingStats,
        qos: QosSnapshot,
        a_ca: usize,
        a_rc: usize,
        now: SimTime,
        duration: SimTime,
    ) -> GlobalState {
        GlobalState {
            v_delay: features.delay,
            v_jitter: features.jitter,
            v_loss: features.loss,
            utilization: sensing.utilization,
            mgmt_fraction: sensing.mgmt_fraction,
            active_sources: (sensing.observed_sources as f64 / SOURCES_NORM).min(1.0),
            a_ca: a_ca as f64,
            a_rc: a_rc as f64 / (RC_ACTIONS - 1) as f64,
            t_frac: (now.micros() as f64 / duration.micros().max(1) as f64).min(1.0),
            qos_delay: qos.delay,
            qos_jitter: qos.jitter,
            qos_loss: qos.loss,
        }
    }

    pub fn to_vec(self) -> [f64; GLOBAL_STATE_DIM] {
        [
            self.v_delay,
            self.v_jitter,
            self.v_loss,
            self.utilization,
            self.mgmt_fraction,
            self.active_sources,
            self.a_ca,
            self.a_rc,
            self.t_frac,
            self.qos_delay,
            self.qos_jitter,
            self.qos_loss,
        ]
    }
}

/// Rolling stack of the last [`OBS_STACK`] observation frames, flattened
/// oldest-first with zero padding while history is short.
#[derive(Debug, Clone)]
pub struct ObsStack<const D: usize> {
    frames: VecDeque<[f64; D]>,
}

impl<const D: usize> Default for ObsStack<D> {
    fn default() -> Self {
        ObsStack { frames: VecDeque::with_capacity(OBS_STACK) }
    }
}

impl<const D: usize> ObsStack<D> {
    pub fn push(&mut self, frame: [f64; D]) {
        if self.frames.len() == OBS_STACK {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut out = vec![0.0; D * OBS_STACK];
        let offset = OBS_STACK - self.frames.len();
        for (i, frame) in self.frames.iter().enumerate() {
            out[(offset + i) * D..(offset + i + 1) * D].copy_from_slice(frame);
        }
        out
    }
}

/// First index holding the maximum. Ties resolve to the lowest index, so
/// an all-equal access head prefers Wait and an all-equal rate head the
/// most robust modulation.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over a Q row: one uniform draw decides exploration, a
/// second picks the random action.
pub fn epsilon_greedy(q: &[f64], epsilon: f64, rng: &mut RngStream) -> usize {
    if rng.next_uniform() < epsilon {
        rng.uniform_int((q.len() - 1) as u32) as usize
    } else {
        argmax(q)
    }
}

/// One training transition of the joint policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub ca_obs: Vec<f64>,
    pub rc_obs: Vec<f64>,
    pub a_ca: usize,
    pub a_rc: usize,
    pub reward: f64,
    pub terms: RewardTerms,
    pub next_state: Vec<f64>,
    pub next_ca_obs: Vec<f64>,
    pub next_rc_obs: Vec<f64>,
    pub done: bool,
}

/// One local reward arriving from an agent, stamped with the time the
/// outcome behind it resolved.
#[derive(Debug, Clone, Copy)]
pub struct Upload {
    pub t: SimTime,
    pub reward: f64,
}

#[derive(Debug, Clone)]
struct Snapshot {
    state: Vec<f64>,
    ca_obs: Vec<f64>,
    rc_obs: Vec<f64>,
    a_ca: usize,
    a_rc: Option<usize>,
}

/// Collects decisions and reward uploads into [`Experience`]s.
///
/// A step boundary is each access decision. The transition emitted there
/// spans from the previous decision to this one; its reward is the fresh
/// episode signal plus every upload from the interval, discounted by age.
/// Until the rate agent has acted at least once there is no joint action,
/// so the first transitions are skipped.
#[derive(Debug, Clone)]
pub struct DeviceAgent {
    gamma_per_ms: f64,
    prev: Option<Snapshot>,
    pending: Vec<Upload>,
    out: Vec<Experience>,
}

impl DeviceAgent {
    pub fn new(gamma_per_ms: f64) -> Self {
        DeviceAgent { gamma_per_ms, prev: None, pending: Vec::new(), out: Vec::new() }
    }

    pub fn upload(&mut self, t: SimTime, reward: f64) {
        self.pending.push(Upload { t, reward });
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_step(
        &mut self,
        now: SimTime,
        state: Vec<f64>,
        ca_obs: Vec<f64>,
        rc_obs: Vec<f64>,
        a_ca: usize,
        a_rc: Option<usize>,
        r_state: f64,
    ) {
        self.emit(now, &state, &ca_obs, &rc_obs, r_state, false);
        self.prev = Some(Snapshot { state, ca_obs, rc_obs, a_ca, a_rc });
    }

    /// Seals the episode: the last pending transition is emitted with the
    /// terminal flag set.
    pub fn finish(
        &mut self,
        now: SimTime,
        state: Vec<f64>,
        ca_obs: Vec<f64>,
        rc_obs: Vec<f64>,
        r_state: f64,
    ) {
        self.emit(now, &state, &ca_obs, &rc_obs, r_state, true);
        self.prev = None;
    }

    fn emit(
        &mut self,
        now: SimTime,
        state: &[f64],
        ca_obs: &[f64],
        rc_obs: &[f64],
        r_state: f64,
        done: bool,
    ) {
        let uploads: Vec<(f64, f64)> = self
            .pending
            .drain(..)
            .map(|u| (now.since(u.t) as f64 / 1000.0, u.reward))
            .collect();
        let Some(prev) = &self.prev else { return };
        let Some(a_rc) = prev.a_rc else { return };
        let terms = RewardTerms { r_state, uploads };
        let reward = terms.total(self.gamma_per_ms);
        self.out.push(Experience {
            state: prev.state.clone(),
            ca_obs: prev.ca_obs.clone(),
            rc_obs: prev.rc_obs.clone(),
            a_ca: prev.a_ca,
            a_rc,
            reward,
            terms,
            next_state: state.to_vec(),
            next_ca_obs: ca_obs.to_vec(),
            next_rc_obs: rc_obs.to_vec(),
            done,
        });
    }

    pub fn drain(&mut self) -> Vec<Experience> {
        std::mem::take(&mut self.out)
    }

    pub fn pending_uploads(&self) -> usize {
        self.pending.len()
    }
}

// ---------------------------------------------------------------------------
