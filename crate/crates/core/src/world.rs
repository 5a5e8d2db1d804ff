//! The episode engine: devices contending for one shared medium.
//!
//! Wires the event queue, propagation model, MAC state machines, traffic
//! generators, and (optionally) the learned policy into one deterministic
//! episode. Timing follows the usual listen-before-talk shape: a device
//! with a head-of-line packet arms slot edges once the medium has been
//! idle for DIFS, freezes while it is busy, acknowledgements return SIFS
//! after a delivered data frame, and a missing acknowledgement times out
//! a fixed slack after the ACK would have ended.

use std::collections::HashSet;

use crate::agent::{
    epsilon_greedy, CaAction, CaObs, DeviceAgent, Experience, GlobalState, ObsStack, RcObs,
    RcTracker, CA_OBS_DIM, RC_OBS_DIM,
};
use crate::env::{place_devices, Role, ScenarioConfig};
use crate::error::Result;
use crate::kernel::{EventHandle, EventQueue, SimTime};
use crate::mac::{DcfState, Flow, MacCounters, Packet, PacketKind, RateCtl, SlotDecision, TxQueue};
use crate::medium::Medium;
use crate::metrics::{EpisodeMetrics, FlowStats};
use crate::phy::{Frame, FrameKind, PhyParams, NUM_MCS};
use crate::qmix::PolicyNets;
use crate::reward::{
    ca_local_reward, rc_local_reward, state_reward, AirtimeWindow, CaOutcome, QosRequirement,
    RewardConfig, SensedFrame, SensingWindow, ServiceTracker, AIRTIME_WINDOW_US,
    SENSING_WINDOW_US,
};
use crate::rng::{RngStream, RngStreams};
use crate::trace::{kind as trace_kind, TraceHeader, TraceSink};

/// Which access policy the measured station runs. Every other device
/// always runs the classical distributed coordination baseline.
#[derive(Debug, Clone)]
pub enum EpisodePolicy {
    Baseline,
    Aimac { nets: PolicyNets, epsilon: f64 },
}

impl EpisodePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EpisodePolicy::Baseline => "baseline",
            EpisodePolicy::Aimac { .. } => "aimac",
        }
    }
}

/// Where the episode trace goes, if anywhere.
#[derive(Debug, Clone)]
pub enum TraceTarget {
    Off,
    Memory,
    File(std::path::PathBuf),
}

/// Everything a finished episode reports back.
#[derive(Debug)]
pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    /// Per-device sender-side accounting, indexed like the roster.
    pub counters: Vec<MacCounters>,
    /// Packets still queued per device when time ran out.
    pub residual: Vec<u64>,
    /// Transitions collected from the learned policy (empty for baseline).
    pub experiences: Vec<Experience>,
    /// Access decisions the learned policy made (its exploration clock).
    pub env_steps: u64,
    /// The trace text when tracing to memory was requested.
    pub trace: Option<String>,
}

enum Ev {
    Arrival { gen: usize },
    SlotEdge { dev: usize },
    TxStart { dev: usize, what: TxWhat },
    TxEnd { dev: usize },
    AckTimeout { dev: usize, token: u64 },
}

enum TxWhat {
    /// Head-of-line packet, committed at a slot edge or as a burst frame.
    Queued,
    /// Acknowledgement for `pkt`, sent back to the data sender.
    Ack { to: usize, pkt: u64 },
}

type Q = EventQueue<Ev>;

struct ActiveTxRt {
    tx_id: u64,
    pkt: u64,
    dst: Option<usize>,
    dur_us: u64,
    flow: Option<Flow>,
    created: SimTime,
}

struct PendingAckRt {
    pkt: u64,
    token: u64,
    timer: EventHandle,
    data_dur_us: u64,
}

struct DeviceRt {
    uses_agent: bool,
    burst_len: u32,
    burst_credit: u32,
    queue: TxQueue,
    dcf: DcfState,
    rate: RateCtl,
    counters: MacCounters,
    /// Carrier state at this device (own transmissions included).
    busy: bool,
    idle_since: SimTime,
    slot_handle: Option<EventHandle>,
    /// A committed transmission start is already on the event queue.
    tx_pending: bool,
    active: Option<ActiveTxRt>,
    pending_ack: Option<PendingAckRt>,
    /// Modulation chosen for the committed attempt, if not the adapter's.
    committed_mcs: Option<usize>,
    first_attempt: bool,
    last_agent_mcs: usize,
    waited: u32,
    backoff_rng: RngStream,
}

struct GenRt {
    dev: usize,
    dst: Option<usize>,
    flow: Option<Flow>,
    kind: PacketKind,
    profile: crate::env::TrafficProfile,
    rng: RngStream,
}

struct AgentCtl {
    dev: usize,
    nets: PolicyNets,
    epsilon: f64,
    ca_stack: ObsStack<CA_OBS_DIM>,
    rc_stack: ObsStack<RC_OBS_DIM>,
    tracker: RcTracker,
    device: DeviceAgent,
    rng: RngStream,
    env_steps: u64,
}

struct World {
    phy: PhyParams,
    qos: QosRequirement,
    rewards: RewardConfig,
    duration: SimTime,
    medium: Medium,
    devices: Vec<DeviceRt>,
    gens: Vec<GenRt>,
    rng_medium: RngStream,
    next_pkt: u64,
    next_token: u64,
    delivered_ids: HashSet<u64>,
    up: FlowStats,
    down: FlowStats,
    service: ServiceTracker,
    sensing: SensingWindow,
    airtime: AirtimeWindow,
    agent: Option<AgentCtl>,
    trace: TraceSink,
    dut_ap: usize,
    dut_sta: usize,
    episode_seed: u64,
}

/// Runs one episode of `config` under `policy` and the given seed.
///
/// `duration_us` overrides the configured episode length when set (useful
/// for short training rollouts on a long evaluation scenario).
pub fn run_episode(
    config: &ScenarioConfig,
    policy: &EpisodePolicy,
    episode_seed: u64,
    duration_us: Option<u64>,
    trace_to: TraceTarget,
) -> Result<EpisodeOutcome> {
    config.validate()?;
    let duration = SimTime::from_micros(duration_us.unwrap_or(config.duration_us));
    let dut_ap = config.dut_ap().expect("validated config has a measured pair");
    let dut_sta = config.dut_sta().expect("validated config has a measured pair");

    let positions = place_devices(config, episode_seed)?;
    let powers: Vec<f64> =
        config.devices.iter().map(|d| config.phy.tx_power_dbm(d.role == Role::Ap)).collect();
    let medium = Medium::new(positions, powers, dut_sta);

    let streams = RngStreams::new(episode_seed);
    let mut devices = Vec::with_capacity(config.devices.len());
    for (i, spec) in config.devices.iter().enumerate() {
        devices.push(DeviceRt {
            uses_agent: matches!(policy, EpisodePolicy::Aimac { .. }) && i == dut_sta,
            burst_len: spec.burst_len,
            burst_credit: 0,
            queue: TxQueue::default(),
            dcf: DcfState::new(),
            rate: RateCtl::new(NUM_MCS - 1),
            counters: MacCounters::default(),
            busy: false,
            idle_since: SimTime::ZERO,
            slot_handle: None,
            tx_pending: false,
            active: None,
            pending_ack: None,
            committed_mcs: None,
            first_attempt: true,
            last_agent_mcs: 0,
            waited: 0,
            backoff_rng: streams.stream(&format!("backoff/{}", spec.name)),
        });
    }

    let mut gens = Vec::new();
    for (i, spec) in config.devices.iter().enumerate() {
        if let Some(p) = &spec.uplink {
            gens.push(GenRt {
                dev: i,
                dst: spec.ap,
                flow: (i == dut_sta).then_some(Flow::Uplink),
                kind: PacketKind::Data,
                profile: p.clone(),
                rng: streams.stream(&format!("gen/{}/up", spec.name)),
            });
        }
        if let Some(p) = &spec.downlink {
            gens.push(GenRt {
                dev: spec.ap.expect("validated downlink has an access point"),
                dst: Some(i),
                flow: (i == dut_sta).then_some(Flow::Downlink),
                kind: PacketKind::Data,
                profile: p.clone(),
                rng: streams.stream(&format!("gen/{}/down", spec.name)),
            });
        }
        if let Some(p) = &spec.mgmt {
            gens.push(GenRt {
                dev: i,
                dst: None,
                flow: None,
                kind: PacketKind::Mgmt,
                profile: p.clone(),
                rng: streams.stream(&format!("gen/{}/mgmt", spec.name)),
            });
        }
    }

    let agent = match policy {
        EpisodePolicy::Baseline => None,
        EpisodePolicy::Aimac { nets, epsilon } => Some(AgentCtl {
            dev: dut_sta,
            nets: nets.clone(),
            epsilon: *epsilon,
            ca_stack: ObsStack::default(),
            rc_stack: ObsStack::default(),
            tracker: RcTracker::default(),
            device: DeviceAgent::new(config.reward.gamma_upload_per_ms),
            rng: streams.stream("explore"),
            env_steps: 0,
        }),
    };

    let header = TraceHeader {
        scenario: config.kind.name().to_string(),
        seed: episode_seed,
        policy: policy.name().to_string(),
        dut_ap,
        dut_sta,
        duration_us: duration.micros(),
        tail_ms: config.qos.delay_ms,
    };
    let trace = match trace_to {
        TraceTarget::Off => TraceSink::off(),
        TraceTarget::Memory => TraceSink::memory(&header),
        TraceTarget::File(path) => TraceSink::file(&path, &header)?,
    };

    let mut world = World {
        phy: config.phy.clone(),
        qos: config.qos,
        rewards: config.reward,
        duration,
        medium,
        devices,
        gens,
        rng_medium: streams.stream("medium"),
        next_pkt: 0,
        next_token: 0,
        delivered_ids: HashSet::new(),
        up: FlowStats::default(),
        down: FlowStats::default(),
        service: ServiceTracker::new(config.qos, config.reward.theta_per_s),
        sensing: SensingWindow::new(SENSING_WINDOW_US),
        airtime: AirtimeWindow::new(AIRTIME_WINDOW_US),
        agent,
        trace,
        dut_ap,
        dut_sta,
        episode_seed,
    };

    let mut queue: Q = EventQueue::new();
    for (gi, g) in world.gens.iter_mut().enumerate() {
        let first = SimTime::from_micros(g.profile.sample_interval_us(&mut g.rng));
        queue.schedule(first, Ev::Arrival { gen: gi }).expect("first arrival in the future");
    }
    queue.run_until(duration, |q, t, seq, ev| world.dispatch(q, t, seq, ev));

    world.finish(duration)
}

impl World {
    fn dispatch(&mut self, q: &mut Q, t: SimTime, seq: u64, ev: Ev) {
        match ev {
            Ev::Arrival { gen } => self.on_arrival(q, t, seq, gen),
            Ev::SlotEdge { dev } => self.on_slot_edge(q, t, seq, dev),
            Ev::TxStart { dev, what } => self.on_tx_start(q, t, seq, dev, what),
            Ev::TxEnd { dev } => self.on_tx_end(q, t, seq, dev),
            Ev::AckTimeout { dev, token } => self.on_ack_timeout(q, t, seq, dev, token),
        }
    }

    // ---- traffic ---------------------------------------------------------

    fn on_arrival(&mut self, q: &mut Q, t: SimTime, seq: u64, gen: usize) {
        let (dev, dst, flow, kind, frames) = {
            let g = &self.gens[gen];
            (g.dev, g.dst, g.flow, g.kind, g.profile.frames_per_burst.max(1))
        };
        {
            let g = &mut self.gens[gen];
            let next = t + g.profile.sample_interval_us(&mut g.rng);
            q.schedule(next, Ev::Arrival { gen }).expect("next arrival in the future");
        }
        for _ in 0..frames {
            let bytes = {
                let g = &mut self.gens[gen];
                g.profile.sample_size_bytes(&mut g.rng)
            };
            let id = self.next_pkt;
            self.next_pkt += 1;
            self.devices[dev].counters.generated += 1;
            match flow {
                Some(Flow::Uplink) => self.up.note_generated(),
                Some(Flow::Downlink) => self.down.note_generated(),
                None => {}
            }
            let packet =
                Packet { id, bytes, created: t, kind, src: dev, dst, flow };
            let overflowed = self.devices[dev].queue.push(packet).is_err();
            if self.trace.enabled() {
                let mut detail = format!("pkt={id} bytes={bytes}");
                if let Some(f) = flow {
                    detail.push_str(&format!(" flow={}", f.label()));
                }
                if overflowed {
                    detail.push_str(" drop=overflow");
                }
                self.trace.line(t, seq, trace_kind::ARRIVAL, dev, &detail);
            }
            if overflowed {
                self.devices[dev].counters.dropped_overflow += 1;
                if flow.is_some() {
                    self.service.on_loss(t);
                }
            } else if self.devices[dev].queue.len() == 1 {
                // Fresh head of line on an otherwise idle device.
                self.start_access(q, t, dev);
            }
        }
    }

    /// New head-of-line packet: draw a fresh backoff (the learned policy
    /// decides per edge instead) and arm slot edges.
    fn start_access(&mut self, q: &mut Q, t: SimTime, dev: usize) {
        let d = &mut self.devices[dev];
        if !d.uses_agent {
            d.dcf.draw_backoff(&mut d.backoff_rng);
        }
        self.try_arm(q, t, dev);
    }

    fn try_arm(&mut self, q: &mut Q, t: SimTime, dev: usize) {
        let difs = self.phy.difs_us;
        let d = &mut self.devices[dev];
        if d.slot_handle.is_some()
            || d.busy
            || d.active.is_some()
            || d.tx_pending
            || d.pending_ack.is_some()
            || d.queue.is_empty()
        {
            return;
        }
        let fire = SimTime::from_micros(t.micros().max(d.idle_since.micros() + difs));
        d.slot_handle =
            Some(q.schedule(fire, Ev::SlotEdge { dev }).expect("slot edge in the future"));
    }

    fn apply_cca(&mut self, q: &mut Q, t: SimTime, transitions: &[(usize, bool)]) {
        for &(dev, busy) in transitions {
            let d = &mut self.devices[dev];
            d.busy = busy;
            if busy {
                // Freeze: the backoff counter survives, the edge does not.
                if let Some(h) = d.slot_handle.take() {
                    q.cancel(h);
                }
            } else {
                d.idle_since = t;
                self.try_arm(q, t, dev);
            }
        }
    }

    // ---- contention ------------------------------------------------------

    fn on_slot_edge(&mut self, q: &mut Q, t: SimTime, seq: u64, dev: usize) {
        let d = &mut self.devices[dev];
        d.slot_handle = None;
        if d.busy
            || d.active.is_some()
            || d.tx_pending
            || d.pending_ack.is_some()
            || d.queue.is_empty()
        {
            return;
        }
        if d.uses_agent {
            self.agent_decide(q, t, seq, dev);
            return;
        }
        match d.dcf.on_slot_edge(false) {
            SlotDecision::TransmitNow => self.commit_tx(q, t, dev, None),
            SlotDecision::Decrement => {
                let fire = t + self.phy.slot_us;
                d.slot_handle =
                    Some(q.schedule(fire, Ev::SlotEdge { dev }).expect("slot edge in the future"));
            }
            SlotDecision::Freeze => unreachable!("edge fired while idle"),
        }
    }

    /// One decision of the learned policy at an idle slot edge.
    fn agent_decide(&mut self, q: &mut Q, t: SimTime, seq: u64, dev: usize) {
        let sensing_stats = self.sensing.stats(t);
        let qos_snap = self.service.qos_snapshot();
        let features = self.service.features();
        let hol_age_ms = {
            let front = self.devices[dev].queue.front().expect("edge needs a head of line");
            t.since(front.created) as f64 / 1000.0
        };
        let waited_before = self.devices[dev].waited;

        let agent = self.agent.as_mut().expect("agent device without a policy");
        let ca_obs = CaObs::build(
            false,
            &sensing_stats,
            hol_age_ms,
            waited_before,
            qos_snap,
            self.qos.delay_ms,
        );
        agent.ca_stack.push(ca_obs.to_vec());
        let ca_in = agent.ca_stack.stacked();
        let a_ca = epsilon_greedy(&agent.nets.ca.q_values(&ca_in), agent.epsilon, &mut agent.rng);
        let rc_obs = RcObs::build(
            agent.tracker.snr_ewma_db,
            agent.tracker.success_ratio,
            hol_age_ms,
            self.qos.delay_ms,
        );
        agent.rc_stack.push(rc_obs.to_vec());
        let rc_in = agent.rc_stack.stacked();
        let a_rc = epsilon_greedy(&agent.nets.rc.q_values(&rc_in), agent.epsilon, &mut agent.rng);

        let r_state = state_reward(features, sensing_stats.utilization, &self.rewards);
        let state =
            GlobalState::build(features, &sensing_stats, qos_snap, a_ca, a_rc, t, self.duration)
                .to_vec()
                .into();
        agent.device.on_step(t, state, ca_in, rc_in, a_ca, Some(a_rc), r_state);
        agent.env_steps += 1;

        let transmit = CaAction::from_index(a_ca) == CaAction::Transmit;
        if self.trace.enabled() {
            let label = if transmit { "tx" } else { "wait" };
            self.trace.line(
                t,
                seq,
                trace_kind::SLOT_EDGE,
                dev,
                &format!("ca={label} waited={waited_before}"),
            );
        }
        if transmit {
            self.devices[dev].waited = 0;
            self.devices[dev].last_agent_mcs = a_rc;
            self.commit_tx(q, t, dev, Some(a_rc));
        } else {
            let d = &mut self.devices[dev];
            d.waited += 1;
            let waited_now = d.waited;
            let fire = t + self.phy.slot_us;
            d.slot_handle =
                Some(q.schedule(fire, Ev::SlotEdge { dev }).expect("slot edge in the future"));
            let jain = self.airtime.jain(t);
            let r = ca_local_reward(
                CaOutcome::Waited { waited_slots: waited_now },
                jain,
                &self.rewards,
            );
            self.agent.as_mut().unwrap().device.upload(t, r);
        }
    }

    /// Commits the head-of-line packet: the transmission starts at this
    /// same instant, after every same-instant edge has had its look at
    /// the still-idle medium (so simultaneous winners collide).
    fn commit_tx(&mut self, q: &mut Q, t: SimTime, dev: usize, mcs: Option<usize>) {
        let d = &mut self.devices[dev];
        d.tx_pending = true;
        d.first_attempt = d.dcf.retries == 0;
        d.committed_mcs = mcs;
        d.burst_credit = d.burst_len.saturating_sub(1);
        q.schedule(t, Ev::TxStart { dev, what: TxWhat::Queued }).expect("commit at now");
    }

    // ---- the air ---------------------------------------------------------

    fn on_tx_start(&mut self, q: &mut Q, t: SimTime, seq: u64, dev: usize, what: TxWhat) {
        match what {
            TxWhat::Queued => {
                let d = &mut self.devices[dev];
                d.tx_pending = false;
                if d.active.is_some() {
                    return;
                }
                let Some(front) = d.queue.front() else { return };
                let (pkt_id, bytes, pkt_dst, pkt_kind, pkt_flow, created) =
                    (front.id, front.bytes, front.dst, front.kind, front.flow, front.created);
                let (kind, mcs_idx) = match pkt_kind {
                    PacketKind::Mgmt => (FrameKind::Mgmt, 0),
                    PacketKind::Data => (
                        FrameKind::Data,
                        d.committed_mcs.take().unwrap_or(d.rate.mcs),
                    ),
                };
                let mcs = self.phy.mcs_entry(mcs_idx);
                let dur = self.phy.frame_airtime_us(mcs, bytes);
                let frame = Frame {
                    kind,
                    src: dev,
                    dst: pkt_dst,
                    mcs,
                    payload_bytes: bytes,
                    start: t,
                    end: t + dur,
                };
                let (tx_id, transitions) = self.medium.tx_start(&self.phy, frame);
                d.counters.tx_attempts += 1;
                d.counters.airtime_us += dur;
                let first = d.first_attempt;
                d.active = Some(ActiveTxRt {
                    tx_id,
                    pkt: pkt_id,
                    dst: pkt_dst,
                    dur_us: dur,
                    flow: pkt_flow,
                    created,
                });
                if self.trace.enabled() {
                    let mut detail =
                        format!("pkt={pkt_id} kind={} mcs={mcs_idx} dur={dur}", kind.label());
                    if let Some(dst) = pkt_dst {
                        detail.push_str(&format!(" dst={dst}"));
                    }
                    if first {
                        detail.push_str(" first=1");
                    }
                    self.trace.line(t, seq, trace_kind::TX_START, dev, &detail);
                }
                q.schedule(t + dur, Ev::TxEnd { dev }).expect("tx end in the future");
                self.apply_cca(q, t, &transitions);
            }
            TxWhat::Ack { to, pkt } => {
                let d = &mut self.devices[dev];
                if d.active.is_some() {
                    // The radio was seized in the meantime; the sender
                    // will time out.
                    return;
                }
                let mcs = self.phy.mcs_entry(0);
                let dur = self.phy.ack_airtime_us;
                let frame = Frame {
                    kind: FrameKind::Ack,
                    src: dev,
                    dst: Some(to),
                    mcs,
                    payload_bytes: 0,
                    start: t,
                    end: t + dur,
                };
                let (tx_id, transitions) = self.medium.tx_start(&self.phy, frame);
                d.active = Some(ActiveTxRt {
                    tx_id,
                    pkt,
                    dst: Some(to),
                    dur_us: dur,
                    flow: None,
                    created: t,
                });
                if self.trace.enabled() {
                    self.trace.line(
                        t,
                        seq,
                        trace_kind::TX_START,
                        dev,
                        &format!("pkt={pkt} kind=ack mcs=0 dur={dur} dst={to}"),
                    );
                }
                q.schedule(t + dur, Ev::TxEnd { dev }).expect("tx end in the future");
                self.apply_cca(q, t, &transitions);
            }
        }
    }

    fn on_tx_end(&mut self, q: &mut Q, t: SimTime, seq: u64, dev: usize) {
        let active = self.devices[dev].active.take().expect("tx end without transmission");
        let report = self.medium.tx_end(&self.phy, active.tx_id, &mut self.rng_medium);

        // Channel bookkeeping first: what the observer overheard, and who
        // used the air.
        if let Some(obs) = report.observer {
            if obs.decoded {
                self.sensing.push(SensedFrame {
                    end: t,
                    src: report.frame.src,
                    airtime_us: active.dur_us,
                    mgmt: matches!(report.frame.kind, FrameKind::Mgmt),
                });
            }
        }
        match report.frame.kind {
            FrameKind::Data | FrameKind::Mgmt => {
                self.airtime.push(t, dev, active.dur_us);
            }
            FrameKind::Ack => {}
        }

        match report.frame.kind {
            FrameKind::Mgmt => {
                let d = &mut self.devices[dev];
                d.counters.delivered += 1;
                d.counters.airtime_success_us += active.dur_us;
                d.queue.pop();
                if self.trace.enabled() {
                    self.trace.line(
                        t,
                        seq,
                        trace_kind::TX_END,
                        dev,
                        &format!("pkt={}", active.pkt),
                    );
                }
                if !self.devices[dev].queue.is_empty() {
                    self.start_access(q, t, dev);
                }
            }
            FrameKind::Data => {
                let delivery = report.delivery.expect("data frames have a destination");
                if self.trace.enabled() {
                    self.trace.line(
                        t,
                        seq,
                        trace_kind::TX_END,
                        dev,
                        &format!("pkt={} ok={}", active.pkt, delivery.delivered as u8),
                    );
                }
                if delivery.delivered {
                    let dst = active.dst.expect("delivered data has a destination");
                    if self.delivered_ids.insert(active.pkt) {
                        self.devices[dst].counters.rx_delivered += 1;
                        if let Some(flow) = active.flow {
                            let delay_ms = t.since(active.created) as f64 / 1000.0;
                            match flow {
                                Flow::Uplink => self.up.note_delivery(delay_ms),
                                Flow::Downlink => self.down.note_delivery(delay_ms),
                            }
                            self.service.on_delivery(t, delay_ms);
                        }
                    }
                    let ack_at = t + self.phy.sifs_us;
                    q.schedule(ack_at, Ev::TxStart { dev: dst, what: TxWhat::Ack { to: dev, pkt: active.pkt } })
                        .expect("ack in the future");
                }
                // The sender cannot know yet: it waits for the ACK either way.
                let token = self.next_token;
                self.next_token += 1;
                let deadline =
                    t + self.phy.sifs_us + self.phy.ack_airtime_us + self.phy.ack_timeout_slack_us;
                let timer = q
                    .schedule(deadline, Ev::AckTimeout { dev, token })
                    .expect("ack timeout in the future");
                self.devices[dev].pending_ack = Some(PendingAckRt {
                    pkt: active.pkt,
                    token,
                    timer,
                    data_dur_us: active.dur_us,
                });
            }
            FrameKind::Ack => {
                let delivery = report.delivery.expect("acks have a destination");
                if self.trace.enabled() {
                    self.trace.line(
                        t,
                        seq,
                        trace_kind::TX_END,
                        dev,
                        &format!("pkt={} ok={}", active.pkt, delivery.delivered as u8),
                    );
                }
                if delivery.delivered {
                    let to = active.dst.expect("acks are addressed");
                    let matches = self.devices[to]
                        .pending_ack
                        .as_ref()
                        .is_some_and(|p| p.pkt == active.pkt);
                    if matches {
                        self.on_ack_received(q, t, to, delivery.sinr_db);
                    }
                }
            }
        }

        self.apply_cca(q, t, &report.cca_transitions);
        if matches!(report.frame.kind, FrameKind::Ack) {
            // Responding seized the radio, and a transmitter hears no CCA
            // edge from its own frame ending. Any packet that queued up
            // meanwhile still needs its contention round started here.
            self.try_arm(q, t, dev);
        }
    }

    fn on_ack_received(&mut self, q: &mut Q, t: SimTime, dev: usize, ack_sinr_db: f64) {
        let d = &mut self.devices[dev];
        let pending = d.pending_ack.take().expect("checked by caller");
        q.cancel(pending.timer);
        d.counters.delivered += 1;
        d.counters.airtime_success_us += pending.data_dur_us;
        d.dcf.on_ack();
        d.queue.pop();
        if d.uses_agent {
            let agent = self.agent.as_mut().expect("agent device without a policy");
            agent.tracker.on_outcome(true, Some(ack_sinr_db));
            let ratio = agent.tracker.success_ratio;
            let jain = self.airtime.jain(t);
            let agent = self.agent.as_mut().unwrap();
            agent.device.upload(t, ca_local_reward(CaOutcome::Acked, jain, &self.rewards));
            agent.device.upload(t, rc_local_reward(ratio));
        } else {
            d.rate.on_outcome(true);
        }

        let d = &mut self.devices[dev];
        if d.burst_credit > 0 && !d.queue.is_empty() {
            // Transmit opportunity continues after a short gap, without a
            // fresh contention round.
            d.burst_credit -= 1;
            d.tx_pending = true;
            d.first_attempt = true;
            d.committed_mcs = d.uses_agent.then_some(d.last_agent_mcs);
            let fire = t + self.phy.sifs_us;
            q.schedule(fire, Ev::TxStart { dev, what: TxWhat::Queued })
                .expect("burst continuation in the future");
        } else if !d.queue.is_empty() {
            self.start_access(q, t, dev);
        }
    }

    fn on_ack_timeout(&mut self, q: &mut Q, t: SimTime, seq: u64, dev: usize, token: u64) {
        let matches =
            self.devices[dev].pending_ack.as_ref().is_some_and(|p| p.token == token);
        if !matches {
            return;
        }
        let pending = self.devices[dev].pending_ack.take().unwrap();
        let d = &mut self.devices[dev];
        d.counters.ack_timeouts += 1;
        let attempt = d.dcf.retries + 1;
        let dropping = d.dcf.on_ack_timeout();
        if self.trace.enabled() {
            let mut detail = format!("timer=ack-timeout pkt={} retries={attempt}", pending.pkt);
            if dropping {
                detail.push_str(" drop=retry");
            }
            self.trace.line(t, seq, trace_kind::TIMER, dev, &detail);
        }
        if self.devices[dev].uses_agent {
            let agent = self.agent.as_mut().expect("agent device without a policy");
            agent.tracker.on_outcome(false, None);
            let ratio = agent.tracker.success_ratio;
            let jain = self.airtime.jain(t);
            let agent = self.agent.as_mut().unwrap();
            agent.device.upload(t, ca_local_reward(CaOutcome::Timeout, jain, &self.rewards));
            agent.device.upload(t, rc_local_reward(ratio));
        } else {
            self.devices[dev].rate.on_outcome(false);
        }

        let d = &mut self.devices[dev];
        if dropping {
            let packet = d.queue.pop().expect("timed-out packet at head of line");
            d.counters.dropped_retry += 1;
            if packet.flow.is_some() {
                self.service.on_loss(t);
            }
            if !self.devices[dev].queue.is_empty() {
                self.start_access(q, t, dev);
            }
        } else {
            if !d.uses_agent {
                d.dcf.draw_backoff(&mut d.backoff_rng);
            }
            self.try_arm(q, t, dev);
        }
    }

    // ---- wrap-up ---------------------------------------------------------

    fn finish(mut self, t_end: SimTime) -> Result<EpisodeOutcome> {
        let mut experiences = Vec::new();
        let mut env_steps = 0;
        if let Some(mut agent) = self.agent.take() {
            let sensing_stats = self.sensing.stats(t_end);
            let qos_snap = self.service.qos_snapshot();
            let features = self.service.features();
            let hol_age_ms = self.devices[agent.dev]
                .queue
                .front()
                .map_or(0.0, |p| t_end.since(p.created) as f64 / 1000.0);
            let ca_obs = CaObs::build(
                self.devices[agent.dev].busy,
                &sensing_stats,
                hol_age_ms,
                self.devices[agent.dev].waited,
                qos_snap,
                self.qos.delay_ms,
            );
            agent.ca_stack.push(ca_obs.to_vec());
            let rc_obs = RcObs::build(
                agent.tracker.snr_ewma_db,
                agent.tracker.success_ratio,
                hol_age_ms,
                self.qos.delay_ms,
            );
            agent.rc_stack.push(rc_obs.to_vec());
            let r_state = state_reward(features, sensing_stats.utilization, &self.rewards);
            // Terminal bootstrap is masked, so the closing actions are
            // immaterial; zeros keep the encoding in range.
            let state =
                GlobalState::build(features, &sensing_stats, qos_snap, 0, 0, t_end, self.duration)
                    .to_vec()
                    .into();
            agent.device.finish(
                t_end,
                state,
                agent.ca_stack.stacked(),
                agent.rc_stack.stacked(),
                r_state,
            );
            experiences = agent.device.drain();
            env_steps = agent.env_steps;
        }

        let tail = self.qos.delay_ms;
        let metrics = EpisodeMetrics {
            seed: self.episode_seed,
            flow: self.up.merged(&self.down).metrics(tail),
            up: self.up.metrics(tail),
            down: self.down.metrics(tail),
            tx_attempts: self.devices[self.dut_ap].counters.tx_attempts
                + self.devices[self.dut_sta].counters.tx_attempts,
            ack_timeouts: self.devices[self.dut_ap].counters.ack_timeouts
                + self.devices[self.dut_sta].counters.ack_timeouts,
        };
        let counters: Vec<MacCounters> = self.devices.iter().map(|d| d.counters).collect();
        let residual: Vec<u64> = self.devices.iter().map(|d| d.queue.len() as u64).collect();
        let trace = self.trace.finish()?;
        Ok(EpisodeOutcome { metrics, counters, residual, experiences, env_steps, trace })
    }
}

// ---------------------------------------------------------------------------
