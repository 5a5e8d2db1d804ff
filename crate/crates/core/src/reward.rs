//! Service quality tracking and reward shaping.
//!
//! The episode-level signal is built from recency-weighted violation rates:
//! every packet outcome is a sample, weighted by `exp(-theta * age)`, and a
//! feature's value is the weighted fraction of samples that broke their
//! bound. The weighting is computed in O(1) per sample: both the violating
//! and the total sum decay by the same factor, so their ratio never needs
//! the absolute clock. On top of these features sit the shaping terms for
//! the two local agents and the discounted combination that prices how
//! stale each agent's contribution is.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

/// Service bounds the measured flow must hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QosRequirement {
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_rate: f64,
}

impl Default for QosRequirement {
    fn default() -> Self {
        QosRequirement { delay_ms: 30.0, jitter_ms: 10.0, loss_rate: 0.01 }
    }
}

impl QosRequirement {
    pub fn validate(&self) -> Result<(), String> {
        for (v, name) in [
            (self.delay_ms, "delay_ms"),
            (self.jitter_ms, "jitter_ms"),
            (self.loss_rate, "loss_rate"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("qos.{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Weights and constants of the reward shaping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Recency decay of violation samples, per second of age.
    pub theta_per_s: f64,
    /// Discount applied to local rewards per millisecond between an
    /// agent's action and the experience that consumes it.
    pub gamma_upload_per_ms: f64,
    pub w_delay: f64,
    pub w_jitter: f64,
    pub w_loss: f64,
    /// Weight of raw channel utilization in the episode signal. Off by
    /// default; turning it up teaches the policy to leave air for others.
    pub w_channel: f64,
    /// Weight of the fairness term in the access agent's local reward.
    pub fairness_weight: f64,
    /// Slots a deferral may wait before the idle penalty starts.
    pub wait_free_slots: u32,
    pub wait_penalty_per_slot: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            theta_per_s: 1.0,
            gamma_upload_per_ms: 0.9,
            w_delay: 0.5,
            w_jitter: 0.25,
            w_loss: 0.25,
            w_channel: 0.0,
            fairness_weight: 0.5,
            wait_free_slots: 64,
            wait_penalty_per_slot: 0.01,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.theta_per_s.is_finite() && self.theta_per_s > 0.0) {
            return Err("reward.theta_per_s must be positive".into());
        }
        if !(self.gamma_upload_per_ms > 0.0 && self.gamma_upload_per_ms <= 1.0) {
            return Err("reward.gamma_upload_per_ms must be in (0, 1]".into());
        }
        for (v, name) in [
            (self.w_delay, "w_delay"),
            (self.w_jitter, "w_jitter"),
            (self.w_loss, "w_loss"),
            (self.w_channel, "w_channel"),
            (self.fairness_weight, "fairness_weight"),
            (self.wait_penalty_per_slot, "wait_penalty_per_slot"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("reward.{name} must be nonnegative"));
            }
        }
        if self.w_delay + self.w_jitter + self.w_loss == 0.0 {
            return Err("reward needs at least one service weight".into());
        }
        Ok(())
    }
}

/// Recency-weighted violation fraction, maintained in O(1) per sample.
#[derive(Debug, Clone, Default)]
pub struct DecayedRatio {
    violating: f64,
    total: f64,
}

impl DecayedRatio {
    fn decay(&mut self, factor: f64) {
        self.violating *= factor;
        self.total *= factor;
    }

    fn push(&mut self, violating: bool) {
        self.total += 1.0;
        if violating {
            self.violating += 1.0;
        }
    }

    /// Weighted violation fraction; 0 before any sample.
    pub fn value(&self) -> f64 {
        if self.total > 0.0 {
            self.violating / self.total
        } else {
            0.0
        }
    }
}

/// The three violation features of the measured flow.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ServiceFeatures {
    pub delay: f64,
    pub jitter: f64,
    pub loss: f64,
}

/// Recent raw service levels, each normalized by its bound and clamped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QosSnapshot {
    pub delay: f64,
    pub jitter: f64,
    pub loss: f64,
}

const SNAPSHOT_CLAMP: f64 = 4.0;

/// Streaming tracker of the measured flow's service quality.
///
/// Delivered packets contribute delay and jitter samples; every packet
/// outcome (delivered or lost) contributes a loss sample. A jitter sample
/// violates when the delay strays from the running mean delay (inclusive
/// of the current sample) by more than the bound.
#[derive(Debug, Clone)]
pub struct ServiceTracker {
    qos: QosRequirement,
    theta_per_s: f64,
    last: Option<SimTime>,
    delay: DecayedRatio,
    jitter: DecayedRatio,
    loss: DecayedRatio,
    /// Decayed sums for the raw delay and jitter levels.
    delay_level: f64,
    jitter_level: f64,
    /// Running (unweighted, inclusive) mean of delivered delays.
    mean_delay_ms: f64,
    deliveries: u64,
}

impl ServiceTracker {
    pub fn new(qos: QosRequirement, theta_per_s: f64) -> Self {
        ServiceTracker {
            qos,
            theta_per_s,
            last: None,
            delay: DecayedRatio::default(),
            jitter: DecayedRatio::default(),
            loss: DecayedRatio::default(),
            delay_level: 0.0,
            jitter_level: 0.0,
            mean_delay_ms: 0.0,
            deliveries: 0,
        }
    }

    fn advance(&mut self, now: SimTime) {
        if let Some(last) = self.last {
            let dt_s = now.since(last) as f64 * 1e-6;
            if dt_s > 0.0 {
                let factor = (-self.theta_per_s * dt_s).exp();
                self.delay.decay(factor);
                self.jitter.decay(factor);
                self.loss.decay(factor);
                self.delay_level *= factor;
                self.jitter_level *= factor;
            }
        }
        self.last = Some(now);
    }

    pub fn on_delivery(&mut self, now: SimTime, delay_ms: f64) {
        self.advance(now);
        self.deliveries += 1;
        self.mean_delay_ms += (delay_ms - self.mean_delay_ms) / self.deliveries as f64;
        let deviation = (delay_ms - self.mean_delay_ms).abs();
        self.delay.push(delay_ms > self.qos.delay_ms);
        self.jitter.push(deviation > self.qos.jitter_ms);
        self.loss.push(false);
        self.delay_level += delay_ms;
        self.jitter_level += deviation;
    }

    pub fn on_loss(&mut self, now: SimTime) {
        self.advance(now);
        self.loss.push(true);
    }

    pub fn features(&self) -> ServiceFeatures {
        ServiceFeatures {
            delay: self.delay.value(),
            jitter: self.jitter.value(),
            loss: self.loss.value(),
        }
    }

    pub fn qos_snapshot(&self) -> QosSnapshot {
        let weight = self.delay.total;
        let norm = |level: f64, bound: f64| {
            if weight > 0.0 {
                (level / weight / bound).clamp(0.0, SNAPSHOT_CLAMP)
            } else {
                0.0
            }
        };
        QosSnapshot {
            delay: norm(self.delay_level, self.qos.delay_ms),
            jitter: norm(self.jitter_level, self.qos.jitter_ms),
            loss: (self.loss.value() / self.qos.loss_rate).clamp(0.0, SNAPSHOT_CLAMP),
        }
    }
}

/// One packet outcome for the reference implementation: a delivery with
/// its delay, or `None` for a loss.
#[derive(Debug, Clone, Copy)]
pub struct ServiceEvent {
    pub t: SimTime,
    pub delay_ms: Option<f64>,
}

/// Direct (quadratic) recomputation of the violation features, used to
/// cross-check the streaming tracker. Events must be in time order.
pub fn service_features_reference(
    events: &[ServiceEvent],
    qos: &QosRequirement,
    theta_per_s: f64,
) -> ServiceFeatures {
    let now = events.last().map(|e| e.t).unwrap_or(SimTime::ZERO);
    let weight = |t: SimTime| (-theta_per_s * (now.since(t) as f64 * 1e-6)).exp();
    let mut mean = 0.0;
    let mut n = 0u64;
    let mut sums = [(0.0, 0.0); 3];
    for e in events {
        let w = weight(e.t);
        match e.delay_ms {
            Some(d) => {
                n += 1;
                mean += (d - mean) / n as f64;
                for (i, violating) in [
                    (0, d > qos.delay_ms),
                    (1, (d - mean).abs() > qos.jitter_ms),
                    (2, false),
                ] {
                    sums[i].1 += w;
                    if violating {
                        sums[i].0 += w;
                    }
                }
            }
            None => {
                sums[2].1 += w;
                sums[2].0 += w;
            }
        }
    }
    let ratio = |(v, t): (f64, f64)| if t > 0.0 { v / t } else { 0.0 };
    ServiceFeatures { delay: ratio(sums[0]), jitter: ratio(sums[1]), loss: ratio(sums[2]) }
}

pub const SENSING_WINDOW_US: u64 = 50_000;
pub const AIRTIME_WINDOW_US: u64 = 1_000_000;

/// One overheard frame, as decoded by the sensing radio.
#[derive(Debug, Clone, Copy)]
pub struct SensedFrame {
    pub end: SimTime,
    pub src: usize,
    pub airtime_us: u64,
    pub mgmt: bool,
}

/// What the channel looked like over the sensing window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SensingStats {
    /// Fraction of the window covered by overheard frames, clamped to 1.
    pub utilization: f64,
    /// Distinct foreign transmitters heard.
    pub observed_sources: usize,
    /// Fraction of overheard frames that were management traffic.
    pub mgmt_fraction: f64,
    /// Mean overheard frame duration in milliseconds.
    pub mean_airtime_ms: f64,
}

/// Sliding window over decoded foreign frames.
#[derive(Debug, Clone)]
pub struct SensingWindow {
    window_us: u64,
    frames: VecDeque<SensedFrame>,
}

impl SensingWindow {
    pub fn new(window_us: u64) -> Self {
        SensingWindow { window_us, frames: VecDeque::new() }
    }

    pub fn push(&mut self, frame: SensedFrame) {
        self.frames.push_back(frame);
    }

    fn prune(&mut self, now: SimTime) {
        let cutoff = now.micros().saturating_sub(self.window_us);
        while self.frames.front().map_or(false, |f| f.end.micros() < cutoff) {
            self.frames.pop_front();
        }
    }

    pub fn stats(&mut self, now: SimTime) -> SensingStats {
        self.prune(now);
        if self.frames.is_empty() {
            return SensingStats::default();
        }
        let n = self.frames.len() as f64;
        let airtime: u64 = self.frames.iter().map(|f| f.airtime_us).sum();
        let mgmt = self.frames.iter().filter(|f| f.mgmt).count() as f64;
        let mut sources: Vec<usize> = self.frames.iter().map(|f| f.src).collect();
        sources.sort_unstable();
        sources.dedup();
        SensingStats {
            utilization: (airtime as f64 / self.window_us as f64).min(1.0),
            observed_sources: sources.len(),
            mgmt_fraction: mgmt / n,
            mean_airtime_ms: airtime as f64 / n / 1000.0,
        }
    }
}

/// Sliding window of per-device airtime, for the fairness term.
#[derive(Debug, Clone)]
pub struct AirtimeWindow {
    window_us: u64,
    entries: VecDeque<(SimTime, usize, u64)>,
}

impl AirtimeWindow {
    pub fn new(window_us: u64) -> Self {
        AirtimeWindow { window_us, entries: VecDeque::new() }
    }

    pub fn push(&mut self, end: SimTime, src: usize, airtime_us: u64) {
        self.entries.push_back((end, src, airtime_us));
    }

    fn prune(&mut self, now: SimTime) {
        let cutoff = now.micros().saturating_sub(self.window_us);
        while self.entries.front().map_or(false, |e| e.0.micros() < cutoff) {
            self.entries.pop_front();
        }
    }

    /// Airtime per transmitter inside the window, in microseconds.
    pub fn shares(&mut self, now: SimTime) -> Vec<f64> {
        self.prune(now);
        let mut by_src: HashMap<usize, u64> = HashMap::new();
        for &(_, src, us) in &self.entries {
            *by_src.entry(src).or_default() += us;
        }
        by_src.into_values().map(|us| us as f64).collect()
    }

    pub fn jain(&mut self, now: SimTime) -> f64 {
        jain_index(&self.shares(now))
    }
}

/// Jain fairness index `(sum x)^2 / (n sum x^2)`. An empty or all-zero
/// share vector counts as perfectly fair.
pub fn jain_index(shares: &[f64]) -> f64 {
    let sum: f64 = shares.iter().sum();
    let sq: f64 = shares.iter().map(|x| x * x).sum();
    if shares.is_empty() || sq == 0.0 {
        1.0
    } else {
        sum * sum / (shares.len() as f64 * sq)
    }
}

/// Episode-level signal: 1 when service is clean, falling to -1 as the
/// weighted violation mix grows.
pub fn state_reward(features: ServiceFeatures, utilization: f64, cfg: &RewardConfig) -> f64 {
    let mix = cfg.w_delay * features.delay
        + cfg.w_jitter * features.jitter
        + cfg.w_loss * features.loss
        + cfg.w_channel * utilization;
    (1.0 - 2.0 * mix).clamp(-1.0, 1.0)
}

/// What the access agent's last decision led to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaOutcome {
    Acked,
    Timeout,
    Waited { waited_slots: u32 },
}

/// Local shaping for the channel-access agent: outcome term plus a
/// fairness term driven by the Jain index over recent airtime shares.
pub fn ca_local_reward(outcome: CaOutcome, jain: f64, cfg: &RewardConfig) -> f64 {
    let base = match outcome {
        CaOutcome::Acked => 1.0,
        CaOutcome::Timeout => -1.0,
        CaOutcome::Waited { waited_slots } => {
            -cfg.wait_penalty_per_slot * waited_slots.saturating_sub(cfg.wait_free_slots) as f64
        }
    };
    base + cfg.fairness_weight * (2.0 * jain - 1.0)
}

/// Local shaping for the rate agent: its recent first-attempt success
/// ratio, stretched to `[-1, 1]`.
pub fn rc_local_reward(success_ratio: f64) -> f64 {
    2.0 * success_ratio - 1.0
}

/// Combines the episode signal with local terms, each discounted by its
/// age in milliseconds.
pub fn total_reward(r_state: f64, uploads: &[(f64, f64)], gamma_per_ms: f64) -> f64 {
    r_state + uploads.iter().map(|&(age_ms, r)| gamma_per_ms.powf(age_ms) * r).sum::<f64>()
}

/// The ingredients of one experience's reward, kept so the combination
/// can be audited after the fact.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_state: f64,
    /// `(age_ms, local_reward)` per agent upload folded in.
    pub uploads: Vec<(f64, f64)>,
}

impl RewardTerms {
    pub fn total(&self, gamma_per_ms: f64) -> f64 {
        total_reward(self.r_state, &self.uploads, gamma_per_ms)
    }
}

// ---------------------------------------------------------------------------
