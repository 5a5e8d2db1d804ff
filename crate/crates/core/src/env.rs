//! Scenario construction: traffic models, device rosters, placement.
//!
//! A [`ScenarioConfig`] is the complete, serializable description of one
//! environment: channel parameters, service requirements, and a roster of
//! devices with their traffic. Three named builders produce the standard
//! environments (a quiet home, a saturated office floor, a mall concourse
//! full of probing phones); anything else can be written as a TOML file.
//! Packet sizes and inter-arrival gaps are Gumbel-distributed, which gives
//! the right-skewed, heavy-ish tails seen in real game traffic.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::phy::{PhyParams, Position};
use crate::reward::{QosRequirement, RewardConfig};
use crate::rng::{RngStream, RngStreams};

pub const SCHEMA_VERSION: u32 = 1;

/// Mean of Gumbel(0, 1): the Euler constant.
pub const GUMBEL_MEAN_OFFSET: f64 = 0.577_215_664_901_532_9;

/// Draws from Gumbel(mu, beta) by inversion: `mu - beta * ln(-ln(u))`.
/// `beta == 0` collapses to a point mass at `mu`.
pub fn sample_gumbel(mu: f64, beta: f64, rng: &mut RngStream) -> f64 {
    if beta == 0.0 {
        return mu;
    }
    let mut u = rng.next_uniform();
    while u == 0.0 {
        u = rng.next_uniform();
    }
    mu - beta * (-u.ln()).ln()
}

/// Packet size and arrival process of one direction of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficProfile {
    /// Gumbel location of the payload size, bytes.
    pub size_mu: f64,
    /// Gumbel scale of the payload size, bytes. Zero is deterministic.
    pub size_beta: f64,
    /// Gumbel location of the inter-arrival gap, milliseconds.
    pub interval_mu_ms: f64,
    /// Gumbel scale of the inter-arrival gap, milliseconds.
    pub interval_beta_ms: f64,
    /// Packets enqueued per arrival (probe drains send short runs).
    pub frames_per_burst: u32,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        TrafficProfile {
            size_mu: 100.0,
            size_beta: 0.0,
            interval_mu_ms: 10.0,
            interval_beta_ms: 0.0,
            frames_per_burst: 1,
        }
    }
}

pub const SIZE_MIN_BYTES: u32 = 1;
pub const SIZE_MAX_BYTES: u32 = 2000;
pub const INTERVAL_MIN_US: u64 = 100;

impl TrafficProfile {
    /// Small frames every few milliseconds: the latency-critical flow.
    pub fn gaming() -> Self {
        TrafficProfile {
            size_mu: 80.0,
            size_beta: 20.0,
            interval_mu_ms: 15.0,
            interval_beta_ms: 3.0,
            frames_per_burst: 1,
        }
    }

    pub fn bulk(size_mu: f64, size_beta: f64, interval_mu_ms: f64, interval_beta_ms: f64) -> Self {
        TrafficProfile { size_mu, size_beta, interval_mu_ms, interval_beta_ms, frames_per_burst: 1 }
    }

    /// Scanning devices: short fixed-size broadcast bursts, far apart.
    pub fn probe() -> Self {
        TrafficProfile {
            size_mu: 120.0,
            size_beta: 0.0,
            interval_mu_ms: 500.0,
            interval_beta_ms: 100.0,
            frames_per_burst: 3,
        }
    }

    pub fn sample_size_bytes(&self, rng: &mut RngStream) -> u32 {
        let x = sample_gumbel(self.size_mu, self.size_beta, rng).round();
        (x.max(SIZE_MIN_BYTES as f64).min(SIZE_MAX_BYTES as f64)) as u32
    }

    pub fn sample_interval_us(&self, rng: &mut RngStream) -> u64 {
        let ms = sample_gumbel(self.interval_mu_ms, self.interval_beta_ms, rng);
        ((ms * 1000.0).round() as i64).max(INTERVAL_MIN_US as i64) as u64
    }

    /// Analytic mean payload size, ignoring clamping.
    pub fn mean_size_bytes(&self) -> f64 {
        self.size_mu + GUMBEL_MEAN_OFFSET * self.size_beta
    }

    /// Analytic mean inter-arrival gap, ignoring clamping.
    pub fn mean_interval_ms(&self) -> f64 {
        self.interval_mu_ms + GUMBEL_MEAN_OFFSET * self.interval_beta_ms
    }

    /// Mean offered load of this profile in bytes per second.
    pub fn offered_bytes_per_sec(&self) -> f64 {
        self.frames_per_burst as f64 * self.mean_size_bytes() / (self.mean_interval_ms() / 1000.0)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.size_mu.is_finite()
            && self.size_beta.is_finite()
            && self.interval_mu_ms.is_finite()
            && self.interval_beta_ms.is_finite())
        {
            return Err(SimError::Scenario(format!("{what}: non-finite traffic parameter")));
        }
        if self.size_beta < 0.0 || self.interval_beta_ms < 0.0 {
            return Err(SimError::Scenario(format!("{what}: negative Gumbel scale")));
        }
        if self.frames_per_burst == 0 {
            return Err(SimError::Scenario(format!("{what}: frames_per_burst must be at least 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ap,
    Sta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Home,
    Office,
    Mall,
    Custom,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Home => "home",
            ScenarioKind::Office => "office",
            ScenarioKind::Mall => "mall",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "home" => Some(ScenarioKind::Home),
            "office" => Some(ScenarioKind::Office),
            "mall" => Some(ScenarioKind::Mall),
            "custom" => Some(ScenarioKind::Custom),
            _ => None,
        }
    }
}

/// One radio in the scenario.
///
/// Placement is polar around a reference point: the device's own AP if it
/// is associated, the origin otherwise. `rssi_dbm` is the strength of this
/// device's transmissions at that reference point and fixes the radius; the
/// bearing is drawn per episode. An explicit `position` skips all of that.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rssi_dbm: Option<f64>,
    /// Index of the AP this station is associated with. Must come earlier
    /// in the roster. `None` for APs and for unassociated scanners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<usize>,
    /// The measured device pair. Metrics and the learned policy attach to
    /// flagged devices only.
    #[serde(default)]
    pub dut: bool,
    /// Frames the device may send per contention win, later ones following
    /// after a short gap without a fresh backoff.
    #[serde(default = "default_burst_len")]
    pub burst_len: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    /// Station-to-AP traffic (generated at the station).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uplink: Option<TrafficProfile>,
    /// AP-to-station traffic (generated at the station's AP).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downlink: Option<TrafficProfile>,
    /// Broadcast management traffic, sent unacknowledged at the lowest rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mgmt: Option<TrafficProfile>,
}

fn default_burst_len() -> u32 {
    1
}

impl DeviceSpec {
    fn bare(name: &str, role: Role) -> Self {
        DeviceSpec {
            name: name.to_string(),
            role,
            rssi_dbm: None,
            ap: None,
            dut: false,
            burst_len: 1,
            position: None,
            uplink: None,
            downlink: None,
            mgmt: None,
        }
    }
}

/// Complete description of one simulated environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    /// Seed that drew the roster (interferer strengths and the like). The
    /// per-episode seed is separate and supplied at run time.
    pub seed: u64,
    pub duration_us: u64,
    #[serde(default)]
    pub phy: PhyParams,
    #[serde(default)]
    pub qos: QosRequirement,
    #[serde(default)]
    pub reward: RewardConfig,
    pub devices: Vec<DeviceSpec>,
}

impl ScenarioConfig {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::ConfigParse(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::ConfigParse(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(SimError::SchemaVersion {
                found: config.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn dut_sta(&self) -> Option<usize> {
        self.devices.iter().position(|d| d.dut && d.role == Role::Sta)
    }

    pub fn dut_ap(&self) -> Option<usize> {
        self.devices.iter().position(|d| d.dut && d.role == Role::Ap)
    }

    /// Analytic offered load over all data flows, bytes per second.
    pub fn offered_bytes_per_sec(&self) -> f64 {
        self.devices
            .iter()
            .flat_map(|d| [&d.uplink, &d.downlink])
            .flatten()
            .map(|p| p.offered_bytes_per_sec())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_us == 0 {
            return Err(SimError::Scenario("duration_us must be positive".into()));
        }
        self.phy.validate().map_err(SimError::Scenario)?;
        self.qos.validate().map_err(SimError::Scenario)?;
        self.reward.validate().map_err(SimError::Scenario)?;
        if self.devices.is_empty() {
            return Err(SimError::Scenario("no devices".into()));
        }
        let mut names = std::collections::HashSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            let tag = |m: &str| SimError::Scenario(format!("device {} ({}): {m}", i, d.name));
            if d.name.is_empty() || !names.insert(d.name.clone()) {
                return Err(tag("empty or duplicate name"));
            }
            if d.burst_len == 0 {
                return Err(tag("burst_len must be at least 1"));
            }
            if d.position.is_none() && d.rssi_dbm.is_none() {
                return Err(tag("needs either a position or an rssi_dbm"));
            }
            if let Some(p) = d.position {
                if !(p.x.is_finite() && p.y.is_finite()) {
                    return Err(tag("non-finite position"));
                }
            }
            match (d.role, d.ap) {
                (Role::Ap, Some(_)) => return Err(tag("an AP cannot be associated")),
                (Role::Sta, Some(ap)) => {
                    if ap >= i {
                        return Err(tag("stations must come after their AP in the roster"));
                    }
                    if self.devices[ap].role != Role::Ap {
                        return Err(tag("associated with a non-AP device"));
                    }
                }
                (Role::Sta, None) => {
                    if d.uplink.is_some() || d.downlink.is_some() {
                        return Err(tag("data traffic requires an association"));
                    }
                }
                (Role::Ap, None) => {}
            }
            if d.role == Role::Ap && (d.uplink.is_some() || d.downlink.is_some()) {
                return Err(tag("flows are declared on the station side"));
            }
            for (profile, what) in [(&d.uplink, "uplink"), (&d.downlink, "downlink"), (&d.mgmt, "mgmt")]
            {
                if let Some(p) = profile {
                    p.validate(&format!("device {} {what}", d.name))?;
                }
            }
        }
        match (self.dut_ap(), self.dut_sta()) {
            (Some(ap), Some(sta)) => {
                if self.devices[sta].ap != Some(ap) {
                    return Err(SimError::Scenario(
                        "the measured station must associate with the measured AP".into(),
                    ));
                }
            }
            _ => {
                return Err(SimError::Scenario(
                    "the roster needs one measured AP and one measured station".into(),
                ));
            }
        }
        Ok(())
    }
}

fn uniform_in(lo: f64, hi: f64, rng: &mut RngStream) -> f64 {
    lo + (hi - lo) * rng.next_uniform()
}

/// Builds one of the named environments. The `seed` fixes the roster
/// (interferer strengths); it is independent of the per-episode seed.
pub fn build_scenario(kind: ScenarioKind, seed: u64) -> Result<ScenarioConfig> {
    let mut rng = RngStreams::new(seed).stream("scenario");
    let mut devices = Vec::new();

    let mut dut_ap = DeviceSpec::bare("dut-ap", Role::Ap);
    dut_ap.dut = true;
    dut_ap.position = Some(Position { x: 0.0, y: 0.0 });
    devices.push(dut_ap);

    let mut dut_sta = DeviceSpec::bare("dut-sta", Role::Sta);
    dut_sta.dut = true;
    dut_sta.ap = Some(0);
    dut_sta.rssi_dbm = Some(-55.0);
    dut_sta.uplink = Some(TrafficProfile::gaming());
    dut_sta.downlink = Some(TrafficProfile::gaming());
    devices.push(dut_sta);

    match kind {
        ScenarioKind::Home => {
            // Two neighboring apartments, each an AP with two streaming
            // stations. Light, bursty downlink.
            for a in 0..2 {
                let mut ap = DeviceSpec::bare(&format!("nbr-ap-{a}"), Role::Ap);
                ap.rssi_dbm = Some(uniform_in(-75.0, -60.0, &mut rng));
                ap.burst_len = 4;
                devices.push(ap);
            }
            for a in 0..2 {
                for s in 0..2 {
                    let mut sta = DeviceSpec::bare(&format!("nbr-sta-{a}-{s}"), Role::Sta);
                    sta.ap = Some(2 + a);
                    sta.rssi_dbm = Some(uniform_in(-65.0, -50.0, &mut rng));
                    sta.downlink = Some(TrafficProfile::bulk(1200.0, 200.0, 30.0, 5.0));
                    sta.burst_len = 4;
                    devices.push(sta);
                }
            }
        }
        ScenarioKind::Office => {
            // A dense floor: eight overlapping cells, five busy clients
            // each, heavy aggregated traffic both ways. The channel is
            // saturated and the measured flow has to fight for air.
            for a in 0..8 {
                let mut ap = DeviceSpec::bare(&format!("of-ap-{a}"), Role::Ap);
                ap.rssi_dbm = Some(uniform_in(-70.0, -50.0, &mut rng));
                ap.burst_len = 8;
                devices.push(ap);
            }
            for a in 0..8 {
                for s in 0..5 {
                    let mut sta = DeviceSpec::bare(&format!("of-sta-{a}-{s}"), Role::Sta);
                    sta.ap = Some(2 + a);
                    sta.rssi_dbm = Some(uniform_in(-62.0, -45.0, &mut rng));
                    sta.uplink = Some(TrafficProfile::bulk(1300.0, 100.0, 4.0, 1.0));
                    sta.downlink = Some(TrafficProfile::bulk(1300.0, 100.0, 6.0, 1.5));
                    sta.burst_len = 8;
                    devices.push(sta);
                }
            }
        }
        ScenarioKind::Mall => {
            // A concourse: many cells at moderate load, plus a crowd of
            // unassociated phones scanning with broadcast bursts.
            for a in 0..12 {
                let mut ap = DeviceSpec::bare(&format!("mall-ap-{a}"), Role::Ap);
                ap.rssi_dbm = Some(uniform_in(-78.0, -58.0, &mut rng));
                ap.burst_len = 4;
                devices.push(ap);
            }
            for s in 0..10 {
                let mut sta = DeviceSpec::bare(&format!("mall-sta-{s}"), Role::Sta);
                sta.ap = Some(2 + s % 12);
                sta.rssi_dbm = Some(uniform_in(-65.0, -48.0, &mut rng));
                sta.downlink = Some(TrafficProfile::bulk(1200.0, 200.0, 25.0, 4.0));
                sta.burst_len = 4;
                devices.push(sta);
            }
            for p in 0..60 {
                let mut sta = DeviceSpec::bare(&format!("scan-{p}"), Role::Sta);
                sta.rssi_dbm = Some(uniform_in(-85.0, -55.0, &mut rng));
                sta.mgmt = Some(TrafficProfile::probe());
                devices.push(sta);
            }
        }
        ScenarioKind::Custom => {
            return Err(SimError::Scenario(
                "custom scenarios are loaded from a file, not built".into(),
            ));
        }
    }

    let config = ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        kind,
        seed,
        duration_us: 10_000_000,
        phy: PhyParams::default(),
        qos: QosRequirement::default(),
        reward: RewardConfig::default(),
        devices,
    };
    config.validate()?;
    Ok(config)
}

/// Turns the roster into coordinates for one episode. Radii come from each
/// device's `rssi_dbm`; bearings are drawn from the episode's placement
/// stream, one per device without an explicit position, in roster order.
pub fn place_devices(config: &ScenarioConfig, episode_seed: u64) -> Result<Vec<Position>> {
    let mut rng = RngStreams::new(episode_seed).stream("placement");
    let mut positions: Vec<Position> = Vec::with_capacity(config.devices.len());
    for (i, d) in config.devices.iter().enumerate() {
        if let Some(p) = d.position {
            positions.push(p);
            continue;
        }
        let rssi = d.rssi_dbm.ok_or_else(|| {
            SimError::Scenario(format!("device {} ({}) has no placement", i, d.name))
        })?;
        let anchor = match d.ap {
            Some(ap) => positions[ap],
            None => Position { x: 0.0, y: 0.0 },
        };
        let txp = config.phy.tx_power_dbm(d.role == Role::Ap);
        let radius = config.phy.distance_for_rssi(txp, rssi);
        let theta = 2.0 * std::f64::consts::PI * rng.next_uniform();
        positions.push(Position {
            x: anchor.x + radius * theta.cos(),
            y: anchor.y + radius * theta.sin(),
        });
    }
    Ok(positions)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(name: &str) -> RngStream {
        RngStreams::new(99).stream(name)
    }

    #[test]
    fn gumbel_matches_analytic_mean_and_median() {
        let mut rng = stream("gumbel");
        let n = 1_000_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_gumbel(15.0, 3.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let expected_mean = 15.0 + GUMBEL_MEAN_OFFSET * 3.0;
        assert!(
            (mean - expected_mean).abs() / expected_mean < 0.01,
            "mean {mean} vs {expected_mean}"
        );
        let (_, med, _) = xs.select_nth_unstable_by(n / 2, f64::total_cmp);
        // Median of Gumbel(mu, beta) is mu - beta ln(ln 2).
        let expected_med = 15.0 - 3.0 * std::f64::consts::LN_2.ln();
        assert!(
            (*med - expected_med).abs() / expected_med < 0.01,
            "median {med} vs {expected_med}"
        );
    }

    #[test]
    fn gumbel_zero_scale_is_deterministic() {
        let mut rng = stream("point");
        for _ in 0..100 {
            assert_eq!(sample_gumbel(120.0, 0.0, &mut rng), 120.0);
        }
    }

    #[test]
    fn gaming_profile_stays_in_its_envelope() {
        let mut rng = stream("gaming");
        let p = TrafficProfile::gaming();
        let n = 20_000;
        let mut size_sum = 0.0;
        let mut gap_sum = 0.0;
        for _ in 0..n {
            let s = p.sample_size_bytes(&mut rng);
            assert!((SIZE_MIN_BYTES..=SIZE_MAX_BYTES).contains(&s));
            size_sum += s as f64;
            let g = p.sample_interval_us(&mut rng);
            assert!(g >= INTERVAL_MIN_US);
            gap_sum += g as f64 / 1000.0;
        }
        let mean_size = size_sum / n as f64;
        let mean_gap_ms = gap_sum / n as f64;
        assert!((30.0..150.0).contains(&mean_size), "mean size {mean_size} B");
        assert!((10.0..30.0).contains(&mean_gap_ms), "mean gap {mean_gap_ms} ms");
    }

    #[test]
    fn sampling_clamps_extremes() {
        let mut rng = stream("clamp");
        let tiny = TrafficProfile {
            size_mu: -50.0,
            size_beta: 0.0,
            interval_mu_ms: 0.01,
            interval_beta_ms: 0.0,
            ..TrafficProfile::default()
        };
        assert_eq!(tiny.sample_size_bytes(&mut rng), SIZE_MIN_BYTES);
        assert_eq!(tiny.sample_interval_us(&mut rng), INTERVAL_MIN_US);
        let huge = TrafficProfile { size_mu: 50_000.0, ..TrafficProfile::default() };
        assert_eq!(huge.sample_size_bytes(&mut rng), SIZE_MAX_BYTES);
    }

    #[test]
    fn rosters_have_the_advertised_shape() {
        let home = build_scenario(ScenarioKind::Home, 1).unwrap();
        let office = build_scenario(ScenarioKind::Office, 1).unwrap();
        let mall = build_scenario(ScenarioKind::Mall, 1).unwrap();
        assert_eq!(home.devices.len(), 8);
        assert_eq!(office.devices.len(), 50);
        assert_eq!(mall.devices.len(), 84);
        for c in [&home, &office, &mall] {
            assert_eq!(c.dut_ap(), Some(0));
            assert_eq!(c.dut_sta(), Some(1));
            c.validate().unwrap();
        }
        let scanners = mall.devices.iter().filter(|d| d.mgmt.is_some()).count();
        assert_eq!(scanners, 60);
    }

    #[test]
    fn office_is_far_heavier_than_home() {
        let home = build_scenario(ScenarioKind::Home, 1).unwrap();
        let office = build_scenario(ScenarioKind::Office, 1).unwrap();
        assert!(
            office.offered_bytes_per_sec() > 5.0 * home.offered_bytes_per_sec(),
            "office {} vs home {}",
            office.offered_bytes_per_sec(),
            home.offered_bytes_per_sec()
        );
    }

    #[test]
    fn toml_round_trips_byte_identically() {
        let c = build_scenario(ScenarioKind::Mall, 7).unwrap();
        let text = c.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.to_toml_string().unwrap(), text);
        assert_eq!(back.devices.len(), c.devices.len());
    }

    #[test]
    fn roster_is_a_pure_function_of_the_seed() {
        let a = build_scenario(ScenarioKind::Office, 3).unwrap().to_toml_string().unwrap();
        let b = build_scenario(ScenarioKind::Office, 3).unwrap().to_toml_string().unwrap();
        let c = build_scenario(ScenarioKind::Office, 4).unwrap().to_toml_string().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let c = build_scenario(ScenarioKind::Home, 1).unwrap();
        let text = c.to_toml_string().unwrap().replace("schema_version = 1", "schema_version = 9");
        match ScenarioConfig::from_toml_str(&text) {
            Err(SimError::SchemaVersion { found: 9, expected: 1 }) => {}
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn validation_catches_roster_mistakes() {
        let base = build_scenario(ScenarioKind::Home, 1).unwrap();

        let mut c = base.clone();
        c.devices[4].ap = Some(5); // forward reference
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.devices[4].ap = Some(1); // a station, not an AP
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.devices[1].dut = false; // no measured station left
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.devices[3].rssi_dbm = None; // no placement at all
        assert!(c.validate().is_err());

        let mut c = base;
        c.devices[1].downlink.as_mut().unwrap().frames_per_burst = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn placement_radius_matches_the_requested_rssi() {
        let c = build_scenario(ScenarioKind::Home, 1).unwrap();
        let pos = place_devices(&c, 11).unwrap();
        assert_eq!(pos[0], Position { x: 0.0, y: 0.0 });
        let want = c.phy.distance_for_rssi(c.phy.sta_tx_power_dbm, -55.0);
        let got = pos[1].distance(pos[0]);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        // Stations orbit their own AP, not the origin.
        for (i, d) in c.devices.iter().enumerate() {
            if let (Some(ap), Some(rssi)) = (d.ap, d.rssi_dbm) {
                let txp = c.phy.tx_power_dbm(false);
                let want = c.phy.distance_for_rssi(txp, rssi);
                assert!((pos[i].distance(pos[ap]) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn placement_is_per_episode_deterministic() {
        let c = build_scenario(ScenarioKind::Mall, 2).unwrap();
        let a = place_devices(&c, 5).unwrap();
        let b = place_devices(&c, 5).unwrap();
        let d = place_devices(&c, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        // Bearings differ between episodes, radii do not.
        for i in 1..c.devices.len() {
            let anchor = match c.devices[i].ap {
                Some(ap) => a[ap],
                None => Position { x: 0.0, y: 0.0 },
            };
            let anchor_d = match c.devices[i].ap {
                Some(ap) => d[ap],
                None => Position { x: 0.0, y: 0.0 },
            };
            assert!((a[i].distance(anchor) - d[i].distance(anchor_d)).abs() < 1e-9);
        }
    }
}
