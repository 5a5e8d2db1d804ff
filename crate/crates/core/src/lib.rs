//! Discrete-event simulator for Wi-Fi-style contention MACs.
//!
//! The crate models a single contention domain: a handful of APs and STAs
//! share one channel through CSMA/CA, a log-distance path-loss medium decides
//! which frames decode, and synthetic traffic generators drive the queues.
//! One device under test either runs the classical DCF baseline or a learned
//! policy in which two small Q-networks (channel access and rate control)
//! are trained off-policy through a monotonic value-mixing network.
//!
//! Layering, bottom up:
//!
//! * [`kernel`] / [`rng`]: event queue, simulated clock, named deterministic
//!   RNG streams.
//! * [`phy`] / [`medium`]: rate table, airtime, path loss, error model, and
//!   the shared-channel bookkeeping (CCA, SINR, capture).
//! * [`mac`]: DCF contention state, retry/backoff rules, rate adaptation.
//! * [`env`]: traffic profiles, device specs, scenario construction.
//! * [`reward`] / [`agent`]: QoS feature extraction, reward terms, the two
//!   module agents and the device agent that assembles experiences.
//! * [`qmix`] / [`checkpoint`]: hand-rolled Q-networks, the mixing network,
//!   TD updates, replay buffer, parameter snapshots.
//! * [`world`] / [`metrics`] / [`harness`] / [`trace`]: episode assembly,
//!   metric computation, multi-seed evaluation, training loop, trace replay.

pub mod agent;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod mac;
pub mod medium;
pub mod metrics;
pub mod phy;
pub mod qmix;
pub mod reward;
pub mod rng;
pub mod trace;
pub mod world;

pub use error::SimError;
pub use kernel::SimTime;
