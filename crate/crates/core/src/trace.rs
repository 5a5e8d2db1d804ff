//! Event traces: emission, parsing, and metric replay.
//!
//! A trace is one header line plus one line per event,
//! `time_us,seq,kind,device,detail`, where `detail` is space-separated
//! `key=value` pairs. The format is complete enough that the headline
//! metrics of an episode can be recomputed from the trace alone, which is
//! both a debugging tool and a consistency check on the live bookkeeping.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use crate::error::{Result, SimError};
use crate::kernel::SimTime;
use crate::mac::Flow;
use crate::metrics::{EpisodeMetrics, FlowStats};

pub const TRACE_VERSION: u32 = 1;

/// Event kind labels used in trace lines.
pub mod kind {
    pub const ARRIVAL: &str = "packet-arrival";
    pub const SLOT_EDGE: &str = "slot-edge";
    pub const TX_START: &str = "tx-start";
    pub const TX_END: &str = "tx-end";
    pub const TIMER: &str = "timer";
}

/// Identity of a trace: what ran, under which seed and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub scenario: String,
    pub seed: u64,
    pub policy: String,
    pub dut_ap: usize,
    pub dut_sta: usize,
    pub duration_us: u64,
    pub tail_ms: f64,
}

impl TraceHeader {
    fn to_line(&self) -> String {
        format!(
            "# aimac-trace v={} scenario={} seed={} policy={} dut_ap={} dut_sta={} duration_us={} tail_ms={}\n",
            TRACE_VERSION,
            self.scenario,
            self.seed,
            self.policy,
            self.dut_ap,
            self.dut_sta,
            self.duration_us,
            self.tail_ms
        )
    }

    fn parse(line: &str) -> Result<TraceHeader> {
        let bad = |m: &str| SimError::TraceParse { line: 1, message: m.to_string() };
        let rest = line
            .strip_prefix("# aimac-trace ")
            .ok_or_else(|| bad("missing trace header"))?;
        let mut kv = HashMap::new();
        for part in rest.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("malformed header field"))?;
            kv.insert(k, v);
        }
        let field = |k: &str| kv.get(k).copied().ok_or_else(|| bad(&format!("header lacks {k}")));
        let version: u32 = field("v")?.parse().map_err(|_| bad("bad version"))?;
        if version != TRACE_VERSION {
            return Err(bad(&format!("unsupported trace version {version}")));
        }
        Ok(TraceHeader {
            scenario: field("scenario")?.to_string(),
            seed: field("seed")?.parse().map_err(|_| bad("bad seed"))?,
            policy: field("policy")?.to_string(),
            dut_ap: field("dut_ap")?.parse().map_err(|_| bad("bad dut_ap"))?,
            dut_sta: field("dut_sta")?.parse().map_err(|_| bad("bad dut_sta"))?,
            duration_us: field("duration_us")?.parse().map_err(|_| bad("bad duration_us"))?,
            tail_ms: field("tail_ms")?.parse().map_err(|_| bad("bad tail_ms"))?,
        })
    }
}

/// Trace output: disabled, in memory, or streamed to a file.
pub enum TraceSink {
    Off,
    Memory(String),
    File { w: std::io::BufWriter<std::fs::File>, err: Option<std::io::Error> },
}

impl TraceSink {
    pub fn off() -> Self {
        TraceSink::Off
    }

    pub fn memory(header: &TraceHeader) -> Self {
        TraceSink::Memory(header.to_line())
    }

    pub fn file(path: &std::path::Path, header: &TraceHeader) -> Result<Self> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(header.to_line().as_bytes())?;
        Ok(TraceSink::File { w, err: None })
    }

    pub fn enabled(&self) -> bool {
        !matches!(self, TraceSink::Off)
    }

    pub fn line(&mut self, t: SimTime, seq: u64, kind: &str, device: usize, detail: &str) {
        match self {
            TraceSink::Off => {}
            TraceSink::Memory(buf) => {
                buf.push_str(&format!("{},{},{},{},{}\n", t.micros(), seq, kind, device, detail));
            }
            TraceSink::File { w, err } => {
                if err.is_none() {
                    if let Err(e) =
                        writeln!(w, "{},{},{},{},{}", t.micros(), seq, kind, device, detail)
                    {
                        *err = Some(e);
                    }
                }
            }
        }
    }

    /// Flushes and returns the in-memory text, if any. Surfaces deferred
    /// write errors.
    pub fn finish(self) -> Result<Option<String>> {
        match self {
            TraceSink::Off => Ok(None),
            TraceSink::Memory(buf) => Ok(Some(buf)),
            TraceSink::File { mut w, err } => {
                if let Some(e) = err {
                    return Err(e.into());
                }
                w.flush()?;
                Ok(None)
            }
        }
    }
}

/// One parsed trace line.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub time_us: u64,
    pub seq: u64,
    pub kind: String,
    pub device: usize,
    pub detail: HashMap<String, String>,
}

fn parse_line(lineno: usize, line: &str) -> Result<TraceEvent> {
    let bad = |m: String| SimError::TraceParse { line: lineno, message: m };
    let mut parts = line.splitn(5, ',');
    let mut next = |what: &str| {
        parts.next().ok_or_else(|| bad(format!("missing field {what}")))
    };
    let time_us: u64 =
        next("time_us")?.parse().map_err(|_| bad("bad time_us".into()))?;
    let seq: u64 = next("seq")?.parse().map_err(|_| bad("bad seq".into()))?;
    let kind = next("kind")?.to_string();
    let device: usize = next("device")?.parse().map_err(|_| bad("bad device".into()))?;
    let mut detail = HashMap::new();
    if let Some(rest) = parts.next() {
        for pair in rest.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed detail {pair}")))?;
            detail.insert(k.to_string(), v.to_string());
        }
    }
    Ok(TraceEvent { time_us, seq, kind, device, detail })
}

/// Parses a full trace into its header and events.
pub fn parse_trace(text: &str) -> Result<(TraceHeader, Vec<TraceEvent>)> {
    let mut lines = text.lines();
    let header = TraceHeader::parse(
        lines.next().ok_or(SimError::TraceParse { line: 1, message: "empty trace".into() })?,
    )?;
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        events.push(parse_line(i + 2, line)?);
    }
    Ok((header, events))
}

/// Recomputes the episode's headline metrics from its trace.
///
/// Generated packets are the arrival lines tagged with a flow; a delivery
/// is the first `tx-end` with `ok=1` for a tagged packet, timed at frame
/// end. Attempts and ACK timeouts are counted for the measured pair.
pub fn replay_metrics(text: &str) -> Result<(TraceHeader, EpisodeMetrics)> {
    let (header, events) = parse_trace(text)?;
    let mut arrivals: HashMap<u64, (Flow, u64)> = HashMap::new();
    let mut delivered: HashSet<u64> = HashSet::new();
    let mut up = FlowStats::default();
    let mut down = FlowStats::default();
    let mut tx_attempts = 0u64;
    let mut ack_timeouts = 0u64;
    let is_dut = |d: usize| d == header.dut_ap || d == header.dut_sta;

    for e in &events {
        match e.kind.as_str() {
            kind::ARRIVAL => {
                if let (Some(flow), Some(pkt)) = (e.detail.get("flow"), e.detail.get("pkt")) {
                    let flow = match flow.as_str() {
                        "up" => Flow::Uplink,
                        "down" => Flow::Downlink,
                        other => {
                            return Err(SimError::TraceParse {
                                line: 0,
                                message: format!("unknown flow {other}"),
                            })
                        }
                    };
                    let pkt: u64 = pkt.parse().map_err(|_| SimError::TraceParse {
                        line: 0,
                        message: "bad pkt id".into(),
                    })?;
                    match flow {
                        Flow::Uplink => up.note_generated(),
                        Flow::Downlink => down.note_generated(),
                    }
                    arrivals.insert(pkt, (flow, e.time_us));
                }
            }
            kind::TX_START => {
                if is_dut(e.device) && e.detail.get("kind").map(String::as_str) != Some("ack") {
                    tx_attempts += 1;
                }
            }
            kind::TX_END => {
                if e.detail.get("ok").map(String::as_str) == Some("1") {
                    if let Some(pkt) = e.detail.get("pkt") {
                        let pkt: u64 = pkt.parse().map_err(|_| SimError::TraceParse {
                            line: 0,
                            message: "bad pkt id".into(),
                        })?;
                        if let Some(&(flow, t_gen)) = arrivals.get(&pkt) {
                            if delivered.insert(pkt) {
                                let delay_ms = (e.time_us - t_gen) as f64 / 1000.0;
                                match flow {
                                    Flow::Uplink => up.note_delivery(delay_ms),
                                    Flow::Downlink => down.note_delivery(delay_ms),
                                }
                            }
                        }
                    }
                }
            }
            kind::TIMER => {
                if is_dut(e.device)
                    && e.detail.get("timer").map(String::as_str) == Some("ack-timeout")
                {
                    ack_timeouts += 1;
                }
            }
            _ => {}
        }
    }

    let metrics = EpisodeMetrics {
        seed: header.seed,
        flow: up.merged(&down).metrics(header.tail_ms),
        up: up.metrics(header.tail_ms),
        down: down.metrics(header.tail_ms),
        tx_attempts,
        ack_timeouts,
    };
    Ok((header, metrics))
}

/// Access decisions of the measured station, in order: `(time_us,
/// transmitted, waited_slots before the decision)`.
pub fn parse_ca_decisions(text: &str) -> Result<Vec<(u64, bool, u32)>> {
    let (header, events) = parse_trace(text)?;
    let mut out = Vec::new();
    for e in &events {
        if e.kind == kind::SLOT_EDGE && e.device == header.dut_sta {
            if let Some(ca) = e.detail.get("ca") {
                let transmit = match ca.as_str() {
                    "tx" => true,
                    "wait" => false,
                    other => {
                        return Err(SimError::TraceParse {
                            line: 0,
                            message: format!("unknown ca decision {other}"),
                        })
                    }
                };
                let waited: u32 = e
                    .detail
                    .get("waited")
                    .ok_or(SimError::TraceParse {
                        line: 0,
                        message: "slot-edge lacks waited".into(),
                    })?
                    .parse()
                    .map_err(|_| SimError::TraceParse {
                        line: 0,
                        message: "bad waited".into(),
                    })?;
                out.push((e.time_us, transmit, waited));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> TraceHeader {
        TraceHeader {
            scenario: "home".into(),
            seed: 42,
            policy: "baseline".into(),
            dut_ap: 0,
            dut_sta: 1,
            duration_us: 10_000_000,
            tail_ms: 30.0,
        }
    }

    #[test]
    fn header_round_trips() {
        let h = header();
        let parsed = TraceHeader::parse(h.to_line().trim_end()).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn memory_sink_collects_ordered_lines() {
        let mut sink = TraceSink::memory(&header());
        sink.line(SimTime::from_micros(5), 1, kind::ARRIVAL, 1, "pkt=0 flow=up bytes=80");
        sink.line(SimTime::from_micros(9), 2, kind::SLOT_EDGE, 1, "ca=tx waited=0");
        let text = sink.finish().unwrap().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("# aimac-trace v=1 scenario=home seed=42"));
        assert_eq!(lines[1], "5,1,packet-arrival,1,pkt=0 flow=up bytes=80");
        assert_eq!(lines[2], "9,2,slot-edge,1,ca=tx waited=0");
    }

    fn synthetic_trace() -> String {
        let mut sink = TraceSink::memory(&header());
        let mut seq = 0;
        let mut line = |t: u64, kind: &str, dev: usize, detail: &str| {
            seq += 1;
            // Closures cannot capture sink twice; emulate via raw access.
            (t, seq, kind.to_string(), dev, detail.to_string())
        };
        let rows = vec![
            line(1000, kind::ARRIVAL, 1, "pkt=1 flow=up bytes=80"),
            line(1500, kind::ARRIVAL, 0, "pkt=3 flow=down bytes=90"),
            line(2000, kind::ARRIVAL, 1, "pkt=2 flow=up bytes=70"),
            line(2050, kind::ARRIVAL, 4, "pkt=50 bytes=1200"),
            line(2100, kind::TX_START, 1, "pkt=1 kind=data mcs=3 dur=68 dst=0 first=1"),
            line(3000, kind::TX_END, 1, "pkt=1 ok=1"),
            line(3100, kind::TX_START, 0, "pkt=1 kind=ack dst=1 dur=32"),
            line(3132, kind::TX_END, 0, "pkt=1 ok=1"),
            line(3200, kind::TX_START, 0, "pkt=3 kind=data mcs=3 dur=70 dst=1 first=1"),
            line(4500, kind::TX_END, 0, "pkt=3 ok=1"),
            line(5000, kind::TX_START, 1, "pkt=2 kind=data mcs=3 dur=60 dst=0 first=1"),
            line(5060, kind::TX_END, 1, "pkt=2 ok=0"),
            line(5200, kind::TIMER, 1, "timer=ack-timeout pkt=2 retries=1"),
            line(6000, kind::TX_START, 4, "pkt=50 kind=data mcs=0 dur=400 dst=2 first=1"),
            line(6400, kind::TX_END, 4, "pkt=50 ok=1"),
            // A duplicate delivery of pkt 3 must not double count.
            line(7000, kind::TX_START, 0, "pkt=3 kind=data mcs=3 dur=70 dst=1"),
            line(7070, kind::TX_END, 0, "pkt=3 ok=1"),
        ];
        for (t, s, k, d, detail) in rows {
            sink.line(SimTime::from_micros(t), s, &k, d, &detail);
        }
        sink.finish().unwrap().unwrap()
    }

    #[test]
    fn replay_reconstructs_hand_computed_metrics() {
        let (h, m) = replay_metrics(&synthetic_trace()).unwrap();
        assert_eq!(h.seed, 42);
        // Up: pkt 1 delivered at 3000 (2 ms), pkt 2 lost. Down: pkt 3
        // delivered at 4500 (3 ms), the later duplicate ignored. Device
        // 4's packet has no flow tag and is invisible to the metrics.
        assert_eq!(m.up.generated, 2);
        assert_eq!(m.up.delivered, 1);
        assert_eq!(m.down.generated, 1);
        assert_eq!(m.down.delivered, 1);
        assert_eq!(m.flow.generated, 3);
        assert!((m.flow.latency_ms.unwrap() - 2.5).abs() < 1e-12);
        assert!((m.flow.loss_rate.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // Attempts: pkt1, pkt3 (twice), pkt2 from the pair; device 4's and
        // the ACK do not count.
        assert_eq!(m.tx_attempts, 4);
        assert_eq!(m.ack_timeouts, 1);
    }

    #[test]
    fn ca_decisions_parse_in_order() {
        let mut sink = TraceSink::memory(&header());
        sink.line(SimTime::from_micros(9), 1, kind::SLOT_EDGE, 1, "ca=wait waited=0");
        sink.line(SimTime::from_micros(18), 2, kind::SLOT_EDGE, 1, "ca=wait waited=1");
        sink.line(SimTime::from_micros(27), 3, kind::SLOT_EDGE, 1, "ca=tx waited=2");
        sink.line(SimTime::from_micros(99), 4, kind::SLOT_EDGE, 0, "ca=tx waited=5");
        let text = sink.finish().unwrap().unwrap();
        let decisions = parse_ca_decisions(&text).unwrap();
        // Device 0 is the AP, not the measured station.
        assert_eq!(decisions, vec![(9, false, 0), (18, false, 1), (27, true, 2)]);
        let mut expected = 0u32;
        for (_, transmit, waited) in decisions {
            assert_eq!(waited, expected);
            expected = if transmit { 0 } else { expected + 1 };
        }
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = format!("{}not,a,valid\n", header().to_line());
        match parse_trace(&text) {
            Err(SimError::TraceParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse failure, got {other:?}"),
        }
        match parse_trace("") {
            Err(SimError::TraceParse { line: 1, .. }) => {}
            other => panic!("expected header failure, got {other:?}"),
        }
        let wrong_version = "# aimac-trace v=9 scenario=home seed=1 policy=baseline dut_ap=0 dut_sta=1 duration_us=1 tail_ms=30\n";
        assert!(parse_trace(wrong_version).is_err());
    }
}
