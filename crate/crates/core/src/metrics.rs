//! Flow metrics and evaluation reports.
//!
//! Latency is the mean end-to-end delay of delivered packets, jitter the
//! population standard deviation of those delays, loss the fraction of
//! generated packets never delivered (drops and end-of-episode residue
//! both count), and the tail probability the fraction of delivered packets
//! over the delay bound. Flows without samples report explicit absences,
//! never NaN.

use serde::{Deserialize, Serialize};

/// Streaming mean and population standard deviation (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanStd {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanStd {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    /// Population standard deviation (divide by n, not n-1).
    pub fn std_pop(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.m2 / self.n as f64).max(0.0).sqrt())
    }
}

/// Raw per-flow tallies: how many packets entered the flow and the delay
/// of every one that made it across.
#[derive(Debug, Clone, Default)]
pub struct FlowStats {
    pub generated: u64,
    pub delays_ms: Vec<f64>,
}

impl FlowStats {
    pub fn note_generated(&mut self) {
        self.generated += 1;
    }

    pub fn note_delivery(&mut self, delay_ms: f64) {
        self.delays_ms.push(delay_ms);
    }

    pub fn merged(&self, other: &FlowStats) -> FlowStats {
        let mut delays_ms = self.delays_ms.clone();
        delays_ms.extend_from_slice(&other.delays_ms);
        FlowStats { generated: self.generated + other.generated, delays_ms }
    }

    pub fn metrics(&self, tail_bound_ms: f64) -> FlowMetrics {
        let delivered = self.delays_ms.len() as u64;
        let mut acc = MeanStd::default();
        let mut over = 0u64;
        for &d in &self.delays_ms {
            acc.push(d);
            if d > tail_bound_ms {
                over += 1;
            }
        }
        FlowMetrics {
            generated: self.generated,
            delivered,
            latency_ms: acc.mean(),
            jitter_ms: acc.std_pop(),
            loss_rate: (self.generated > 0)
                .then(|| (self.generated - delivered.min(self.generated)) as f64 / self.generated as f64),
            tail_prob: (delivered > 0).then(|| over as f64 / delivered as f64),
        }
    }
}

/// The four headline numbers of one flow, with sample counts. `None`
/// marks a quantity that had no samples to compute from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub generated: u64,
    pub delivered: u64,
    pub latency_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub loss_rate: Option<f64>,
    pub tail_prob: Option<f64>,
}

/// Results of one episode, as reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    /// Both directions of the measured flow pooled.
    pub flow: FlowMetrics,
    pub up: FlowMetrics,
    pub down: FlowMetrics,
    /// Data transmission attempts of the measured pair.
    pub tx_attempts: u64,
    pub ack_timeouts: u64,
}

/// A batch of episodes under one policy and scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub scenario: String,
    pub episodes: Vec<EpisodeMetrics>,
}

pub const CSV_HEADER: &str =
    "seed,policy,scenario,latency_ms,jitter_ms,loss_rate,tail_prob,tx_attempts,ack_timeouts";

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.seed,
                self.policy,
                self.scenario,
                csv_cell(e.flow.latency_ms),
                csv_cell(e.flow.jitter_ms),
                csv_cell(e.flow.loss_rate),
                csv_cell(e.flow.tail_prob),
                e.tx_attempts,
                e.ack_timeouts
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Full<'a> {
            policy: &'a str,
            scenario: &'a str,
            aggregate: AggregateMetrics,
            episodes: &'a [EpisodeMetrics],
        }
        let full = Full {
            policy: &self.policy,
            scenario: &self.scenario,
            aggregate: self.aggregate(),
            episodes: &self.episodes,
        };
        serde_json::to_string_pretty(&full).expect("report serialization cannot fail")
    }

    /// Across-episode means and standard deviations of the headline
    /// numbers, skipping absent values; `None` when no episode had one.
    pub fn aggregate(&self) -> AggregateMetrics {
        let stat = |f: fn(&EpisodeMetrics) -> Option<f64>| {
            let mut s = MeanStd::default();
            for v in self.episodes.iter().filter_map(f) {
                s.push(v);
            }
            (s.mean(), s.std_pop())
        };
        let (latency_ms, latency_ms_std) = stat(|e| e.flow.latency_ms);
        let (jitter_ms, jitter_ms_std) = stat(|e| e.flow.jitter_ms);
        let (loss_rate, loss_rate_std) = stat(|e| e.flow.loss_rate);
        let (tail_prob, tail_prob_std) = stat(|e| e.flow.tail_prob);
        AggregateMetrics {
            episodes: self.episodes.len(),
            latency_ms,
            latency_ms_std,
            jitter_ms,
            jitter_ms_std,
            loss_rate,
            loss_rate_std,
            tail_prob,
            tail_prob_std,
        }
    }
}

/// Across-seed means and population standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub episodes: usize,
    pub latency_ms: Option<f64>,
    pub latency_ms_std: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub jitter_ms_std: Option<f64>,
    pub loss_rate: Option<f64>,
    pub loss_rate_std: Option<f64>,
    pub tail_prob: Option<f64>,
    pub tail_prob_std: Option<f64>,
}

// ---------------------------------------------------------------------------
