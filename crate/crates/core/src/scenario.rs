//! Scenario configuration and the traffic-class formalism.
//!
//! A scenario describes the PHY, the per-AC EDCA parameter table and a set
//! of station groups. Each group is a number of identical stations that
//! share an AC activity vector and per-AC traffic descriptors. From the
//! groups we derive the [`TrafficClassTable`]: one traffic class (TC) per
//! distinct `(activity vector, class tag, AC)` triple. Every model in this
//! crate is written against that table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_ACS: usize = 4;

/// Implicit class tag given to the access point when none is configured, so
/// the AP never shares a traffic class with ordinary stations.
pub const AP_CLASS_TAG: &str = "ap";

/// Transmission procedure used for every data frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    #[default]
    Basic,
    #[serde(alias = "rts")]
    RtsCts,
}

/// PHY constants. Durations in microseconds, rates in Mb/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyParams {
    pub slot_time_us: f64,
    pub sifs_us: f64,
    pub data_rate_mbps: f64,
    pub basic_rate_mbps: f64,
    pub ofdm_symbol_us: f64,
    pub preamble_plus_signal_us: f64,
    pub signal_extension_us: f64,
    pub mac_header_bytes: u32,
    pub ack_frame_bytes: u32,
    pub rts_frame_bytes: u32,
    pub cts_frame_bytes: u32,
    pub propagation_delay_us: f64,
}

impl Default for PhyParams {
    /// 802.11g ERP-OFDM at 54 Mb/s data and 6 Mb/s basic rate.
    fn default() -> Self {
        PhyParams {
            slot_time_us: 9.0,
            sifs_us: 10.0,
            data_rate_mbps: 54.0,
            basic_rate_mbps: 6.0,
            ofdm_symbol_us: 4.0,
            preamble_plus_signal_us: 20.0,
            signal_extension_us: 6.0,
            mac_header_bytes: 30,
            ack_frame_bytes: 14,
            rts_frame_bytes: 20,
            cts_frame_bytes: 14,
            propagation_delay_us: 1.0,
        }
    }
}

impl PhyParams {
    pub fn validate(&self) -> Result<()> {
        let durations = [
            ("phy.slot_time_us", self.slot_time_us),
            ("phy.sifs_us", self.sifs_us),
            ("phy.data_rate_mbps", self.data_rate_mbps),
            ("phy.basic_rate_mbps", self.basic_rate_mbps),
            ("phy.ofdm_symbol_us", self.ofdm_symbol_us),
            ("phy.preamble_plus_signal_us", self.preamble_plus_signal_us),
        ];
        for (path, value) in durations {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(path, format!("must be strictly positive, got {value}")));
            }
        }
        for (path, value) in [
            ("phy.signal_extension_us", self.signal_extension_us),
            ("phy.propagation_delay_us", self.propagation_delay_us),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(path, format!("must be non-negative, got {value}")));
            }
        }
        if self.basic_rate_mbps > self.data_rate_mbps {
            return Err(Error::config(
                "phy.basic_rate_mbps",
                "basic rate must not exceed the data rate",
            ));
        }
        for (path, value) in [
            ("phy.mac_header_bytes", self.mac_header_bytes),
            ("phy.ack_frame_bytes", self.ack_frame_bytes),
            ("phy.rts_frame_bytes", self.rts_frame_bytes),
            ("phy.cts_frame_bytes", self.cts_frame_bytes),
        ] {
            if value == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        Ok(())
    }
}

/// EDCA parameters of one access category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcParams {
    pub aifsn: u32,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Number of window doublings `m`. The stage window is additionally
    /// capped by `cw_max`.
    pub max_doublings: u32,
    /// Maximum number of transmission attempts per frame.
    pub retry_limit: u32,
}

impl AcParams {
    /// Parameters with `m` derived as the smallest doubling count that
    /// reaches `cw_max`.
    pub fn new(aifsn: u32, cw_min: u32, cw_max: u32, retry_limit: u32) -> Self {
        AcParams {
            aifsn,
            cw_min,
            cw_max,
            max_doublings: doublings_to_reach(cw_min, cw_max),
            retry_limit,
        }
    }

    /// Contention window `W_{i,k}` used at backoff stage `k` (1-based); the
    /// backoff counter is drawn uniformly from `[0, W]`.
    pub fn window(&self, stage: u32) -> u32 {
        debug_assert!(stage >= 1);
        let doublings = (stage - 1).min(self.max_doublings).min(31);
        let grown = (self.cw_min as u64 + 1) << doublings;
        (grown.min(self.cw_max as u64 + 1) - 1) as u32
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.aifsn < 2 {
            return Err(Error::config(format!("{path}.aifsn"), "AIFSN must be at least 2"));
        }
        if !(self.cw_min + 1).is_power_of_two() {
            return Err(Error::config(
                format!("{path}.cw_min"),
                format!("CW_min must be a power of two minus one, got {}", self.cw_min),
            ));
        }
        if self.cw_min > self.cw_max {
            return Err(Error::config(
                format!("{path}.cw_max"),
                format!("CW_min {} exceeds CW_max {}", self.cw_min, self.cw_max),
            ));
        }
        if self.retry_limit < 1 {
            return Err(Error::config(format!("{path}.retry_limit"), "retry limit must be at least 1"));
        }
        Ok(())
    }
}

fn doublings_to_reach(cw_min: u32, cw_max: u32) -> u32 {
    let mut m = 0;
    while ((cw_min as u64 + 1) << m) < cw_max as u64 + 1 && m < 31 {
        m += 1;
    }
    m
}

/// Per-AC parameter table; `None` marks an unconfigured AC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcTable(pub [Option<AcParams>; NUM_ACS]);

impl Default for AcTable {
    /// 802.11e defaults over an 802.11g PHY with `aCWmin = 31`: background
    /// and best effort use AIFSN 7/3 and CW 31..1023, video AIFSN 2 with CW
    /// 15..31, voice AIFSN 2 with CW 7..15. Retry limit 7 everywhere.
    fn default() -> Self {
        AcTable([
            Some(AcParams::new(7, 31, 1023, 7)),
            Some(AcParams::new(3, 31, 1023, 7)),
            Some(AcParams::new(2, 15, 31, 7)),
            Some(AcParams::new(2, 7, 15, 7)),
        ])
    }
}

impl AcTable {
    pub fn get(&self, ac: usize) -> Option<&AcParams> {
        self.0.get(ac).and_then(Option::as_ref)
    }

    pub fn validate(&self) -> Result<()> {
        let mut previous: Option<(usize, u32)> = None;
        for (ac, params) in self.0.iter().enumerate() {
            let Some(params) = params else { continue };
            params.validate(&format!("acs[{ac}]"))?;
            if let Some((prev_ac, prev_aifsn)) = previous {
                if params.aifsn > prev_aifsn {
                    return Err(Error::config(
                        format!("acs[{ac}].aifsn"),
                        format!(
                            "AIFSN must be non-increasing in the AC index (AC{prev_ac} has {prev_aifsn}, AC{ac} has {})",
                            params.aifsn
                        ),
                    ));
                }
            }
            previous = Some((ac, params.aifsn));
        }
        Ok(())
    }
}

/// Serialized form of one `acs` entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcEntry {
    ac: usize,
    aifsn: u32,
    cw_min: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cw_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_doublings: Option<u32>,
    #[serde(default = "default_retry_limit")]
    retry_limit: u32,
}

fn default_retry_limit() -> u32 {
    7
}

impl AcEntry {
    fn resolve(&self, path: &str) -> Result<AcParams> {
        let (cw_max, max_doublings) = match (self.cw_max, self.max_doublings) {
            (Some(cw_max), Some(m)) => (cw_max, m),
            (Some(cw_max), None) => (cw_max, doublings_to_reach(self.cw_min, cw_max)),
            (None, Some(m)) => {
                let cw_max = ((self.cw_min as u64 + 1) << m.min(31)) - 1;
                let cw_max = u32::try_from(cw_max)
                    .map_err(|_| Error::config(format!("{path}.max_doublings"), "window overflows"))?;
                (cw_max, m)
            }
            (None, None) => {
                return Err(Error::config(
                    path,
                    "one of `cw_max` or `max_doublings` is required",
                ))
            }
        };
        Ok(AcParams {
            aifsn: self.aifsn,
            cw_min: self.cw_min,
            cw_max,
            max_doublings,
            retry_limit: self.retry_limit,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    #[default]
    Saturated,
    Cbr,
    Trace,
}

/// What one AC queue of a station carries.
///
/// `rate_bps` and `packet_bytes` are per flow and describe the application
/// payload; `header_bytes` is added to every packet on its way into the MAC.
/// `flows` aggregates several independent streams into the same queue (the
/// AP's downlink queue carries one stream per connection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficDescriptor {
    pub ac: usize,
    #[serde(default)]
    pub kind: TrafficKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<f64>,
    #[serde(default = "default_packet_bytes")]
    pub packet_bytes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
    #[serde(default = "default_flows")]
    pub flows: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header_bytes: Option<u32>,
}

fn default_packet_bytes() -> u32 {
    1000
}

fn default_flows() -> u32 {
    1
}

/// RTP/UDP/IP overhead carried by every real-time packet.
pub const REALTIME_HEADER_BYTES: u32 = 40;

impl TrafficDescriptor {
    pub fn saturated(ac: usize, packet_bytes: u32) -> Self {
        TrafficDescriptor {
            ac,
            kind: TrafficKind::Saturated,
            rate_bps: None,
            packet_bytes,
            interval_ms: None,
            trace_path: None,
            flows: 1,
            header_bytes: Some(0),
        }
    }

    /// Constant-bit-rate voice-style stream: one `packet_bytes` payload
    /// every `interval_ms`.
    pub fn cbr(ac: usize, packet_bytes: u32, interval_ms: f64) -> Self {
        TrafficDescriptor {
            ac,
            kind: TrafficKind::Cbr,
            rate_bps: Some(8.0 * packet_bytes as f64 / (interval_ms / 1000.0)),
            packet_bytes,
            interval_ms: Some(interval_ms),
            trace_path: None,
            flows: 1,
            header_bytes: None,
        }
    }

    pub fn is_saturated(&self) -> bool {
        self.kind == TrafficKind::Saturated
    }

    pub fn header(&self) -> u32 {
        self.header_bytes.unwrap_or(match self.kind {
            TrafficKind::Saturated => 0,
            TrafficKind::Cbr | TrafficKind::Trace => REALTIME_HEADER_BYTES,
        })
    }

    /// Mean MAC service data unit size in bytes.
    pub fn msdu_bytes(&self) -> u32 {
        self.packet_bytes + self.header()
    }

    /// Aggregate mean packet arrival rate in packets per second; zero for
    /// saturated sources.
    pub fn arrival_rate(&self) -> f64 {
        match self.kind {
            TrafficKind::Saturated => 0.0,
            _ => {
                let rate = self.rate_bps.unwrap_or(0.0);
                self.flows as f64 * rate / (8.0 * self.packet_bytes as f64)
            }
        }
    }

    /// Mean packet interval of a single stream in milliseconds.
    pub fn stream_interval_ms(&self) -> Option<f64> {
        match self.kind {
            TrafficKind::Saturated => None,
            _ => self
                .interval_ms
                .or_else(|| self.rate_bps.map(|r| 8.0 * self.packet_bytes as f64 / r * 1000.0)),
        }
    }

    /// Change the packet interval. For CBR and trace sources the bit rate is
    /// kept and the packet size rescaled, which is how codec sample periods
    /// behave.
    pub fn set_interval_ms(&mut self, interval_ms: f64) {
        if let Some(rate) = self.rate_bps {
            self.packet_bytes = (rate * interval_ms / 8000.0).round().max(1.0) as u32;
        }
        self.interval_ms = Some(interval_ms);
    }

    /// Fill in the derived one of `rate_bps` / `interval_ms` and check the
    /// descriptor is usable.
    pub fn normalize(&mut self, path: &str) -> Result<()> {
        if self.ac >= NUM_ACS {
            return Err(Error::config(format!("{path}.ac"), format!("AC index {} out of range", self.ac)));
        }
        if self.packet_bytes == 0 {
            return Err(Error::config(format!("{path}.packet_bytes"), "packet size must be positive"));
        }
        if self.flows == 0 {
            return Err(Error::config(format!("{path}.flows"), "flow count must be at least 1"));
        }
        match self.kind {
            TrafficKind::Saturated => {}
            TrafficKind::Cbr | TrafficKind::Trace => {
                match (self.rate_bps, self.interval_ms) {
                    (None, None) => {
                        return Err(Error::config(
                            path,
                            "non-saturated traffic needs `rate_bps` or `interval_ms`",
                        ))
                    }
                    (None, Some(interval)) => {
                        if !(interval > 0.0) {
                            return Err(Error::config(format!("{path}.interval_ms"), "must be positive"));
                        }
                        self.rate_bps = Some(8.0 * self.packet_bytes as f64 / (interval / 1000.0));
                    }
                    (Some(rate), None) => {
                        if !(rate > 0.0) {
                            return Err(Error::config(format!("{path}.rate_bps"), "must be positive"));
                        }
                        self.interval_ms = Some(8.0 * self.packet_bytes as f64 / rate * 1000.0);
                    }
                    (Some(rate), Some(interval)) => {
                        if !(rate > 0.0) || !(interval > 0.0) {
                            return Err(Error::config(path, "rate and interval must be positive"));
                        }
                        let bits = rate * interval / 1000.0;
                        let expected = 8.0 * self.packet_bytes as f64;
                        if self.kind == TrafficKind::Cbr && (bits - expected).abs() > 0.01 * expected + 8.0 {
                            return Err(Error::config(
                                path,
                                format!(
                                    "rate x interval = {bits:.1} bits does not match 8 x packet_bytes = {expected}"
                                ),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// A group of `count` identical stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub name: String,
    #[serde(default = "default_count")]
    pub count: u32,
    /// Marks the access point. It gets the implicit class tag `"ap"`.
    #[serde(default)]
    pub ap: bool,
    /// AC activity vector `δ`, one 0/1 entry per AC.
    pub activity: [u8; NUM_ACS],
    /// Distinguishes groups whose activity vectors coincide but whose
    /// traffic differs; groups with different tags never share a class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_tag: Option<String>,
    #[serde(default)]
    pub traffic: Vec<TrafficDescriptor>,
}

fn default_count() -> u32 {
    1
}

impl StationSpec {
    pub fn new(name: impl Into<String>, count: u32, traffic: Vec<TrafficDescriptor>) -> Self {
        let mut activity = [0; NUM_ACS];
        for t in &traffic {
            activity[t.ac] = 1;
        }
        StationSpec {
            name: name.into(),
            count,
            ap: false,
            activity,
            class_tag: None,
            traffic,
        }
    }

    pub fn access_point(traffic: Vec<TrafficDescriptor>) -> Self {
        StationSpec {
            ap: true,
            ..StationSpec::new("ap", 1, traffic)
        }
    }

    pub fn is_active(&self, ac: usize) -> bool {
        self.activity[ac] == 1
    }

    pub fn effective_tag(&self) -> Option<&str> {
        match &self.class_tag {
            Some(tag) => Some(tag.as_str()),
            None if self.ap => Some(AP_CLASS_TAG),
            None => None,
        }
    }

    pub fn traffic_for(&self, ac: usize) -> Option<&TrafficDescriptor> {
        self.traffic.iter().find(|t| t.ac == ac)
    }

    fn validate(&mut self, path: &str, acs: &AcTable) -> Result<()> {
        if self.activity.iter().any(|&a| a > 1) {
            return Err(Error::config(format!("{path}.activity"), "entries must be 0 or 1"));
        }
        if self.activity.iter().all(|&a| a == 0) {
            return Err(Error::config(format!("{path}.activity"), "at least one AC must be active"));
        }
        for ac in 0..NUM_ACS {
            if self.is_active(ac) && acs.get(ac).is_none() {
                return Err(Error::config(
                    format!("{path}.activity"),
                    format!("AC{ac} is active but has no EDCA parameters"),
                ));
            }
        }
        let mut seen = [false; NUM_ACS];
        for (k, traffic) in self.traffic.iter_mut().enumerate() {
            let tpath = format!("{path}.traffic[{k}]");
            traffic.normalize(&tpath)?;
            if self.activity[traffic.ac] == 0 {
                return Err(Error::config(
                    format!("{tpath}.ac"),
                    format!("traffic for AC{} but that AC is inactive", traffic.ac),
                ));
            }
            if std::mem::replace(&mut seen[traffic.ac], true) {
                return Err(Error::config(
                    format!("{tpath}.ac"),
                    format!("duplicate traffic entry for AC{}", traffic.ac),
                ));
            }
        }
        // Active ACs without a descriptor run saturated with the default packet.
        for ac in 0..NUM_ACS {
            if self.is_active(ac) && !seen[ac] {
                self.traffic.push(TrafficDescriptor::saturated(ac, default_packet_bytes()));
            }
        }
        self.traffic.sort_by_key(|t| t.ac);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissionConfig {
    pub rho_threshold: f64,
    pub weight_truncation_epsilon: f64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        AdmissionConfig {
            rho_threshold: 1.0,
            weight_truncation_epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Convergence tolerance on `max |Δτ|`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    /// Convergence tolerance on `max |Δρ|` for the utilization fixed point.
    pub rho_tolerance: f64,
    pub rho_max_iterations: usize,
    pub rho_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-9,
            max_iterations: 10_000,
            damping: 0.5,
            rho_tolerance: 1e-6,
            rho_max_iterations: 1000,
            rho_damping: 0.5,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::config("solver.tolerance", "must be positive"));
        }
        if !(self.rho_tolerance > 0.0) {
            return Err(Error::config("solver.rho_tolerance", "must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("solver.damping", "must lie in (0, 1]"));
        }
        if !(self.rho_damping > 0.0 && self.rho_damping <= 1.0) {
            return Err(Error::config("solver.rho_damping", "must lie in (0, 1]"));
        }
        if self.max_iterations == 0 || self.rho_max_iterations == 0 {
            return Err(Error::config("solver.max_iterations", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Uplink,
    Downlink,
    TwoWay,
}

/// Flow shape added repeatedly by capacity searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySpec {
    pub direction: FlowDirection,
    /// Per-flow traffic; `flows` is ignored.
    pub traffic: TrafficDescriptor,
    #[serde(default = "default_max_flows")]
    pub max_flows: u32,
}

fn default_max_flows() -> u32 {
    400
}

/// Discrete-event simulation settings carried by a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub duration_s: f64,
    pub warmup_s: f64,
    pub deadline_ms: f64,
    pub wired_delay_ms: f64,
    pub buffer_packets: usize,
    pub seeds: Vec<u64>,
    pub loss_threshold: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            duration_s: 100.0,
            warmup_s: 5.0,
            deadline_ms: 150.0,
            wired_delay_ms: 20.0,
            buffer_packets: 100,
            seeds: vec![1, 2, 3, 4, 5],
            loss_threshold: 0.01,
        }
    }
}

/// One scalar or a tuple of values, one per sweep target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Scalar(f64),
    Tuple(Vec<f64>),
}

impl SweepValue {
    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepValue::Scalar(v) => vec![*v],
            SweepValue::Tuple(v) => v.clone(),
        }
    }
}

/// A sweep axis sets every target jointly to the corresponding entry of
/// each value tuple. Axes combine as a Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    pub targets: Vec<String>,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
}

impl SweepSpec {
    /// Every sweep point as `(axis name, value tuple)` labels.
    pub fn points(&self) -> Vec<Vec<(String, Vec<f64>)>> {
        let mut points: Vec<Vec<(String, Vec<f64>)>> = vec![Vec::new()];
        for axis in &self.axes {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for prefix in &points {
                for value in &axis.values {
                    let mut p = prefix.clone();
                    p.push((axis.name.clone(), value.values()));
                    next.push(p);
                }
            }
            points = next;
        }
        points
    }
}

/// Serialized scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    #[serde(default)]
    access: AccessMode,
    #[serde(default)]
    phy: PhyParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acs: Option<Vec<AcEntry>>,
    #[serde(default)]
    stations: Vec<StationSpec>,
    #[serde(default)]
    admission: AdmissionConfig,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacity: Option<CapacitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepSpec>,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub access: AccessMode,
    pub phy: PhyParams,
    pub acs: AcTable,
    pub stations: Vec<StationSpec>,
    pub admission: AdmissionConfig,
    pub solver: SolverConfig,
    pub capacity: Option<CapacitySpec>,
    pub simulation: SimulationSpec,
    pub sweep: SweepSpec,
}

impl Scenario {
    pub fn new(acs: AcTable, stations: Vec<StationSpec>) -> Result<Self> {
        let mut scenario = Scenario {
            access: AccessMode::Basic,
            phy: PhyParams::default(),
            acs,
            stations,
            admission: AdmissionConfig::default(),
            solver: SolverConfig::default(),
            capacity: None,
            simulation: SimulationSpec::default(),
            sweep: SweepSpec::default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_toml_str(document: &str) -> Result<Self> {
        let doc: ScenarioDocument = toml::from_str(document)?;
        let acs = match &doc.acs {
            None => AcTable::default(),
            Some(entries) => {
                let mut table = AcTable([None; NUM_ACS]);
                for (k, entry) in entries.iter().enumerate() {
                    let path = format!("acs[{k}]");
                    if entry.ac >= NUM_ACS {
                        return Err(Error::config(format!("{path}.ac"), "AC index must be 0..=3"));
                    }
                    if table.0[entry.ac].is_some() {
                        return Err(Error::config(format!("{path}.ac"), format!("AC{} configured twice", entry.ac)));
                    }
                    table.0[entry.ac] = Some(entry.resolve(&format!("acs[{}]", entry.ac))?);
                }
                table
            }
        };
        let mut scenario = Scenario {
            access: doc.access,
            phy: doc.phy,
            acs,
            stations: doc.stations,
            admission: doc.admission,
            solver: doc.solver,
            capacity: doc.capacity,
            simulation: doc.simulation.unwrap_or_default(),
            sweep: doc.sweep.unwrap_or_default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut scenario = Self::from_toml_str(&text)?;
        // Trace files are resolved relative to the scenario file.
        if let Some(dir) = path.as_ref().parent() {
            let resolve = |t: &mut TrafficDescriptor| {
                if let Some(p) = &t.trace_path {
                    if p.is_relative() {
                        t.trace_path = Some(dir.join(p));
                    }
                }
            };
            scenario.stations.iter_mut().flat_map(|s| s.traffic.iter_mut()).for_each(resolve);
            if let Some(cap) = scenario.capacity.as_mut() {
                resolve(&mut cap.traffic);
            }
        }
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let acs = self
            .acs
            .0
            .iter()
            .enumerate()
            .filter_map(|(ac, p)| {
                p.map(|p| AcEntry {
                    ac,
                    aifsn: p.aifsn,
                    cw_min: p.cw_min,
                    cw_max: Some(p.cw_max),
                    max_doublings: Some(p.max_doublings),
                    retry_limit: p.retry_limit,
                })
            })
            .collect();
        let doc = ScenarioDocument {
            access: self.access,
            phy: self.phy,
            acs: Some(acs),
            stations: self.stations.clone(),
            admission: self.admission,
            solver: self.solver,
            capacity: self.capacity.clone(),
            simulation: Some(self.simulation.clone()),
            sweep: (!self.sweep.axes.is_empty()).then(|| self.sweep.clone()),
        };
        Ok(toml::to_string(&doc)?)
    }

    pub fn validate(&mut self) -> Result<()> {
        self.phy.validate()?;
        self.acs.validate()?;
        if !(self.admission.rho_threshold > 0.0 && self.admission.rho_threshold <= 1.0) {
            return Err(Error::config("admission.rho_threshold", "must lie in (0, 1]"));
        }
        if !(self.admission.weight_truncation_epsilon >= 0.0 && self.admission.weight_truncation_epsilon < 1.0) {
            return Err(Error::config("admission.weight_truncation_epsilon", "must lie in [0, 1)"));
        }
        self.solver.validate()?;
        // A capacity template may start from an empty BSS.
        if self.stations.is_empty() && self.capacity.is_none() {
            return Err(Error::config("stations", "at least one station group is required"));
        }
        let mut names = std::collections::HashSet::new();
        for (k, station) in self.stations.iter_mut().enumerate() {
            let path = format!("stations[{k}]");
            if station.count == 0 {
                return Err(Error::config(format!("{path}.count"), "count must be at least 1"));
            }
            if !names.insert(station.name.clone()) {
                return Err(Error::config(format!("{path}.name"), format!("duplicate station name `{}`", station.name)));
            }
            station.validate(&path, &self.acs)?;
        }
        if self.stations.iter().filter(|s| s.ap).count() > 1 {
            return Err(Error::config("stations", "at most one group may be the access point"));
        }
        if let Some(ap) = self.stations.iter().find(|s| s.ap) {
            if ap.count != 1 {
                return Err(Error::config("stations", "the access point group must have count 1"));
            }
        }
        if let Some(cap) = self.capacity.as_mut() {
            cap.traffic.normalize("capacity.traffic")?;
            if self.acs.get(cap.traffic.ac).is_none() {
                return Err(Error::config("capacity.traffic.ac", "AC has no EDCA parameters"));
            }
        }
        let sim = &self.simulation;
        if !(sim.duration_s > sim.warmup_s && sim.warmup_s >= 0.0) {
            return Err(Error::config("simulation.duration_s", "duration must exceed the warmup"));
        }
        if sim.buffer_packets == 0 {
            return Err(Error::config("simulation.buffer_packets", "must be positive"));
        }
        // Derive once so table-level errors surface at load time.
        if !self.stations.is_empty() {
            derive_traffic_classes(&self.stations, &self.acs)?;
        }
        Ok(())
    }

    pub fn traffic_classes(&self) -> Result<TrafficClassTable> {
        derive_traffic_classes(&self.stations, &self.acs)
    }

    pub fn access_point(&self) -> Option<&StationSpec> {
        self.stations.iter().find(|s| s.ap)
    }

    /// Set one sweep target. Supported targets:
    /// `stations.<name>.count`, `stations.<name>.traffic.<ac>.<field>` with
    /// field one of `flows`, `rate_bps`, `packet_bytes`, `interval_ms`,
    /// `acs.<ac>.<field>` with field one of `aifsn`, `cw_min`, `cw_max`,
    /// `retry_limit`, and `capacity.<field>` with field `interval_ms`,
    /// `rate_bps` or `packet_bytes`.
    ///
    /// A station count of zero removes the group. The scenario is
    /// revalidated by [`Scenario::with_assignments`], not here.
    pub fn assign(&mut self, target: &str, value: f64) -> Result<()> {
        let parts: Vec<&str> = target.split('.').collect();
        let bad = || Error::config(target, "unknown sweep target");
        let as_u32 = |v: f64| -> Result<u32> {
            if v < 0.0 || v.fract() != 0.0 {
                Err(Error::config(target, format!("expected a non-negative integer, got {v}")))
            } else {
                Ok(v as u32)
            }
        };
        match parts.as_slice() {
            ["stations", name, "count"] => {
                let station = self.stations.iter_mut().find(|s| s.name == *name).ok_or_else(bad)?;
                station.count = as_u32(value)?;
            }
            ["stations", name, "traffic", ac, field] => {
                let ac: usize = ac.parse().map_err(|_| bad())?;
                let station = self.stations.iter_mut().find(|s| s.name == *name).ok_or_else(bad)?;
                let traffic = station.traffic.iter_mut().find(|t| t.ac == ac).ok_or_else(bad)?;
                assign_traffic(traffic, field, value, target)?;
            }
            ["acs", ac, field] => {
                let ac: usize = ac.parse().map_err(|_| bad())?;
                let params = self.acs.0.get_mut(ac).and_then(Option::as_mut).ok_or_else(bad)?;
                let v = as_u32(value)?;
                match *field {
                    "aifsn" => params.aifsn = v,
                    "cw_min" => params.cw_min = v,
                    "cw_max" => {
                        params.cw_max = v;
                        params.max_doublings = doublings_to_reach(params.cw_min, v);
                    }
                    "retry_limit" => params.retry_limit = v,
                    _ => return Err(bad()),
                }
            }
            ["capacity", field] => {
                let cap = self.capacity.as_mut().ok_or_else(bad)?;
                assign_traffic(&mut cap.traffic, field, value, target)?;
            }
            _ => return Err(bad()),
        }
        Ok(())
    }

    /// Copy of the scenario with the given `(target, value)` assignments
    /// applied, zero-count groups dropped and everything revalidated.
    pub fn with_assignments<'a>(&self, assignments: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Scenario> {
        let mut next = self.clone();
        for (target, value) in assignments {
            next.assign(target, value)?;
        }
        next.stations.retain(|s| s.count > 0);
        next.validate()?;
        Ok(next)
    }

    /// Resolve a sweep point (as produced by [`SweepSpec::points`]).
    pub fn at_sweep_point(&self, point: &[(String, Vec<f64>)]) -> Result<Scenario> {
        let mut assignments = Vec::new();
        for (name, values) in point {
            let axis = self
                .sweep
                .axes
                .iter()
                .find(|a| &a.name == name)
                .ok_or_else(|| Error::config("sweep", format!("unknown axis `{name}`")))?;
            if axis.targets.len() != values.len() {
                return Err(Error::config(
                    format!("sweep.axes.{name}"),
                    format!("{} targets but {} values", axis.targets.len(), values.len()),
                ));
            }
            for (t, v) in axis.targets.iter().zip(values) {
                assignments.push((t.as_str(), *v));
            }
        }
        self.with_assignments(assignments)
    }

    /// Scenario with `n` flows of the capacity template added. Uplink flows
    /// become `n` new single-flow stations; downlink flows are aggregated on
    /// the access point's queue for the template AC.
    pub fn with_flows(&self, n: u32) -> Result<Scenario> {
        let cap = self
            .capacity
            .as_ref()
            .ok_or_else(|| Error::config("capacity", "scenario has no capacity template"))?;
        let mut next = self.clone();
        if n == 0 {
            return Ok(next);
        }
        let ac = cap.traffic.ac;
        let mut per_flow = cap.traffic.clone();
        per_flow.flows = 1;
        if matches!(cap.direction, FlowDirection::Uplink | FlowDirection::TwoWay) {
            let mut group = StationSpec::new("capacity_uplink", n, vec![per_flow.clone()]);
            // Keep the swept stations apart from configured groups that might
            // share an activity vector but not the traffic.
            if next.stations.iter().any(|s| !s.ap && s.activity == group.activity && s.class_tag.is_none()) {
                group.class_tag = Some("capacity".into());
            }
            next.stations.push(group);
        }
        if matches!(cap.direction, FlowDirection::Downlink | FlowDirection::TwoWay) {
            let ap = match next.stations.iter_mut().find(|s| s.ap) {
                Some(ap) => ap,
                None => {
                    next.stations.push(StationSpec::access_point(Vec::new()));
                    next.stations.last_mut().expect("just pushed")
                }
            };
            match ap.traffic.iter_mut().find(|t| t.ac == ac) {
                Some(existing) => {
                    let mut probe = existing.clone();
                    probe.flows = 1;
                    if probe != per_flow {
                        return Err(Error::config(
                            "capacity.traffic",
                            format!("access point already carries different AC{ac} traffic"),
                        ));
                    }
                    existing.flows += n;
                }
                None => {
                    let mut aggregate = per_flow;
                    aggregate.flows = n;
                    ap.traffic.push(aggregate);
                    ap.activity[ac] = 1;
                }
            }
        }
        next.validate()?;
        Ok(next)
    }
}

fn assign_traffic(traffic: &mut TrafficDescriptor, field: &str, value: f64, target: &str) -> Result<()> {
    match field {
        "flows" => traffic.flows = value as u32,
        "rate_bps" => {
            traffic.rate_bps = Some(value);
            traffic.interval_ms = None;
        }
        "packet_bytes" => {
            traffic.packet_bytes = value as u32;
            if traffic.kind != TrafficKind::Saturated {
                traffic.interval_ms = None;
            }
        }
        "interval_ms" => traffic.set_interval_ms(value),
        _ => return Err(Error::config(target, "unknown traffic field")),
    }
    Ok(())
}

/// Bit-vector of active ACs.
pub type Activity = [u8; NUM_ACS];

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficClass {
    /// AC index `F(j)`.
    pub ac: usize,
    /// Activity vector `σ_j` shared by all stations of this class.
    pub activity: Activity,
    pub class_tag: Option<String>,
    /// `d_j`: AIFSN of this class's AC minus the smallest AIFSN in the table.
    pub aifs_offset: u32,
    /// `f_j`: number of stations in this class.
    pub stations: u32,
    /// Index of the sibling group `G(j)`: classes co-located at the same
    /// stations share it.
    pub group: usize,
    pub traffic: TrafficDescriptor,
}

impl TrafficClass {
    pub fn is_saturated(&self) -> bool {
        self.traffic.is_saturated()
    }

    /// `λ_j` in packets per second, per station of the class.
    pub fn arrival_rate(&self) -> f64 {
        self.traffic.arrival_rate()
    }

    /// Short label: AC plus the class tag, or the activity vector when
    /// untagged, e.g. `AC3/ap` or `AC1/0101`.
    pub fn label(&self) -> String {
        match &self.class_tag {
            Some(tag) => format!("AC{}/{tag}", self.ac),
            None => {
                let bits: String = self.activity.iter().map(|a| char::from(b'0' + a)).collect();
                format!("AC{}/{bits}", self.ac)
            }
        }
    }
}

/// The derived traffic-class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficClassTable {
    pub classes: Vec<TrafficClass>,
    pub acs: AcTable,
}

impl TrafficClassTable {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn ac_params(&self, j: usize) -> &AcParams {
        self.acs
            .get(self.classes[j].ac)
            .expect("traffic classes only reference configured ACs")
    }

    /// Station counts `f_j`.
    pub fn counts(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.stations).collect()
    }

    /// Sibling set `G(j)` (includes `j`).
    pub fn siblings(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let group = self.classes[j].group;
        self.classes
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.group == group)
            .map(|(k, _)| k)
    }

    /// Number of distinct activity groups, `N(ζ)` when no class tags are used.
    pub fn group_count(&self) -> usize {
        self.classes.iter().map(|c| c.group + 1).max().unwrap_or(0)
    }

    /// Class index for the AC queue of a station group.
    pub fn class_of(&self, station: &StationSpec, ac: usize) -> Option<usize> {
        let tag = station.effective_tag();
        self.classes
            .iter()
            .position(|c| c.ac == ac && c.activity == station.activity && c.class_tag.as_deref() == tag)
    }

    /// Table with the station counts replaced by `counts`; classes with a
    /// zero count are dropped and AIFS offsets are re-based on the classes
    /// that remain. Returns the original index of every retained class.
    pub fn restrict(&self, counts: &[u32]) -> (TrafficClassTable, Vec<usize>) {
        assert_eq!(counts.len(), self.len());
        let kept: Vec<usize> = (0..self.len()).filter(|&j| counts[j] > 0).collect();
        let mut classes: Vec<TrafficClass> = kept
            .iter()
            .map(|&j| TrafficClass {
                stations: counts[j],
                ..self.classes[j].clone()
            })
            .collect();
        rebase(&mut classes, &self.acs);
        (
            TrafficClassTable {
                classes,
                acs: self.acs,
            },
            kept,
        )
    }
}

/// Recompute AIFS offsets and renumber sibling groups in order of first
/// appearance.
fn rebase(classes: &mut [TrafficClass], acs: &AcTable) {
    let aifsn = |c: &TrafficClass| acs.get(c.ac).map(|p| p.aifsn).unwrap_or(0);
    let min = classes.iter().map(aifsn).min().unwrap_or(0);
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    let mut order = Vec::new();
    for c in classes.iter() {
        if !groups.contains_key(&c.group) {
            groups.insert(c.group, order.len());
            order.push(c.group);
        }
    }
    for c in classes.iter_mut() {
        c.aifs_offset = aifsn(c) - min;
        c.group = groups[&c.group];
    }
}

/// Build the traffic-class table from station groups.
///
/// Groups with the same activity vector and class tag are merged (their
/// counts add up) and must agree on the traffic of every active AC. Classes
/// are ordered by AC index, then activity vector, then class tag.
pub fn derive_traffic_classes(stations: &[StationSpec], acs: &AcTable) -> Result<TrafficClassTable> {
    if stations.is_empty() {
        return Err(Error::config("stations", "station list is empty"));
    }
    type Key = (Activity, Option<String>);
    let mut merged: BTreeMap<Key, (u32, &StationSpec, usize)> = BTreeMap::new();
    for (k, station) in stations.iter().enumerate() {
        if station.activity.iter().all(|&a| a == 0) {
            return Err(Error::config(format!("stations[{k}].activity"), "no active AC"));
        }
        for ac in 0..NUM_ACS {
            if station.is_active(ac) && acs.get(ac).is_none() {
                return Err(Error::config(
                    format!("stations[{k}].activity"),
                    format!("AC{ac} is active but has no EDCA parameters"),
                ));
            }
        }
        let key = (station.activity, station.effective_tag().map(str::to_owned));
        match merged.get_mut(&key) {
            Some((count, first, first_idx)) => {
                for ac in (0..NUM_ACS).filter(|&ac| station.is_active(ac)) {
                    if first.traffic_for(ac) != station.traffic_for(ac) {
                        return Err(Error::config(
                            format!("stations[{k}].traffic"),
                            format!(
                                "group `{}` shares its activity vector with `{}` (stations[{first_idx}]) but \
                                 carries different AC{ac} traffic; set distinct `class_tag`s",
                                station.name, first.name
                            ),
                        ));
                    }
                }
                *count += station.count;
            }
            None => {
                merged.insert(key, (station.count, station, k));
            }
        }
    }

    let mut classes = Vec::new();
    for ((activity, tag), (count, station, _)) in &merged {
        for ac in (0..NUM_ACS).filter(|&ac| activity[ac] == 1) {
            let traffic = station
                .traffic_for(ac)
                .cloned()
                .unwrap_or_else(|| TrafficDescriptor::saturated(ac, default_packet_bytes()));
            classes.push(TrafficClass {
                ac,
                activity: *activity,
                class_tag: tag.clone(),
                aifs_offset: 0,
                stations: *count,
                group: usize::MAX,
                traffic,
            });
        }
    }
    classes.sort_by(|a, b| (a.ac, a.activity, &a.class_tag).cmp(&(b.ac, b.activity, &b.class_tag)));

    // Group ids by first appearance in class order.
    let mut group_ids: BTreeMap<(Activity, Option<String>), usize> = BTreeMap::new();
    for c in classes.iter_mut() {
        let next = group_ids.len();
        c.group = *group_ids.entry((c.activity, c.class_tag.clone())).or_insert(next);
    }
    rebase(&mut classes, acs);
    Ok(TrafficClassTable { classes, acs: *acs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sat(ac: usize) -> TrafficDescriptor {
        TrafficDescriptor::saturated(ac, 1000)
    }

    fn group(name: &str, count: u32, acs: &[usize]) -> StationSpec {
        StationSpec::new(name, count, acs.iter().map(|&ac| sat(ac)).collect())
    }

    #[test]
    fn four_classes_for_ap_with_two_downlink_acs() {
        let mut ap = group("ap", 1, &[1, 2]);
        ap.ap = true;
        let stations = vec![ap, group("a", 3, &[1]), group("b", 4, &[2])];
        let table = derive_traffic_classes(&stations, &AcTable::default()).unwrap();
        assert_eq!(table.len(), 4);
        let summary: Vec<(usize, Activity, u32)> =
            table.classes.iter().map(|c| (c.ac, c.activity, c.stations)).collect();
        assert_eq!(
            summary,
            vec![
                (1, [0, 1, 0, 0], 3),
                (1, [0, 1, 1, 0], 1),
                (2, [0, 0, 1, 0], 4),
                (2, [0, 1, 1, 0], 1),
            ]
        );
        // AC1 has AIFSN 3, AC2 has AIFSN 2.
        assert_eq!(table.classes[0].aifs_offset, 1);
        assert_eq!(table.classes[2].aifs_offset, 0);
        // AP classes are siblings.
        assert_eq!(table.siblings(1).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(table.group_count(), 3);
    }

    #[test]
    fn single_station_single_class() {
        let table = derive_traffic_classes(&[group("s", 1, &[3])], &AcTable::default()).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.classes[0].stations, 1);
        assert_eq!(table.classes[0].aifs_offset, 0);
    }

    #[test]
    fn mixed_stations_contribute_one_class_per_ac() {
        let stations = vec![group("ac1", 10, &[1]), group("ac3", 10, &[3]), group("both", 10, &[1, 3])];
        let table = derive_traffic_classes(&stations, &AcTable::default()).unwrap();
        assert_eq!(table.len(), 4);
        assert_eq!(table.counts(), vec![10, 10, 10, 10]);
        // TC1: AC1 with AC3 co-active, TC3: AC3 with AC1 co-active.
        assert_eq!((table.classes[1].ac, table.classes[1].activity), (1, [0, 1, 0, 1]));
        assert_eq!((table.classes[3].ac, table.classes[3].activity), (3, [0, 1, 0, 1]));
    }

    #[test]
    fn identical_groups_merge() {
        let stations = vec![group("a", 2, &[3]), group("b", 5, &[3])];
        let table = derive_traffic_classes(&stations, &AcTable::default()).unwrap();
        assert_eq!(table.counts(), vec![7]);
    }

    #[test]
    fn conflicting_descriptors_need_a_tag() {
        let a = StationSpec::new("a", 1, vec![TrafficDescriptor::cbr(3, 80, 10.0)]);
        let b = StationSpec::new("b", 1, vec![TrafficDescriptor::cbr(3, 160, 20.0)]);
        assert!(derive_traffic_classes(&[a.clone(), b.clone()], &AcTable::default()).is_err());
        let b = StationSpec {
            class_tag: Some("g711-20".into()),
            ..b
        };
        let table = derive_traffic_classes(&[a, b], &AcTable::default()).unwrap();
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn empty_station_list_is_rejected() {
        assert!(derive_traffic_classes(&[], &AcTable::default()).is_err());
    }

    #[test]
    fn unconfigured_ac_is_rejected() {
        let mut acs = AcTable::default();
        acs.0[0] = None;
        let err = derive_traffic_classes(&[group("bk", 1, &[0])], &acs).unwrap_err();
        assert!(err.to_string().contains("AC0"));
    }

    #[test]
    fn missing_phy_block_uses_80211g_defaults() {
        let s = Scenario::from_toml_str(
            r#"
            [[stations]]
            name = "sta"
            activity = [0, 0, 0, 1]
            "#,
        )
        .unwrap();
        assert_eq!(s.phy.slot_time_us, 9.0);
        assert_eq!(s.phy.sifs_us, 10.0);
        assert_eq!(s.phy.data_rate_mbps, 54.0);
        assert_eq!(s.phy.basic_rate_mbps, 6.0);
        // Default EDCA table.
        let aifsn: Vec<u32> = (1..4).map(|ac| s.acs.get(ac).unwrap().aifsn).collect();
        let cw: Vec<u32> = (1..4).map(|ac| s.acs.get(ac).unwrap().cw_min).collect();
        assert_eq!(aifsn, vec![3, 2, 2]);
        assert_eq!(cw, vec![31, 15, 7]);
    }

    #[test]
    fn inverted_window_names_the_ac() {
        let err = Scenario::from_toml_str(
            r#"
            [[acs]]
            ac = 3
            aifsn = 2
            cw_min = 31
            cw_max = 15

            [[stations]]
            name = "sta"
            activity = [0, 0, 0, 1]
            "#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "acs[3].cw_max"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let err = Scenario::from_toml_str(
            r#"
            [[stations]]
            name = "sta"
            activity = [0, 0, 0, 1]
            colour = "blue"
            "#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn cbr_rate_must_match_interval() {
        let mut t = TrafficDescriptor::cbr(3, 80, 10.0);
        t.rate_bps = Some(128_000.0);
        assert!(t.normalize("t").is_err());
    }

    #[test]
    fn window_doubles_and_caps() {
        let ac = AcParams {
            aifsn: 2,
            cw_min: 15,
            cw_max: 127,
            max_doublings: 3,
            retry_limit: 7,
        };
        let w: Vec<u32> = (1..=7).map(|k| ac.window(k)).collect();
        assert_eq!(w, vec![15, 31, 63, 127, 127, 127, 127]);
        let capped = AcParams { cw_max: 31, ..ac };
        assert_eq!(capped.window(5), 31);
    }

    #[test]
    fn codec_interval_keeps_the_bit_rate() {
        let mut t = TrafficDescriptor::cbr(3, 80, 10.0);
        t.set_interval_ms(30.0);
        assert_eq!(t.packet_bytes, 240);
        assert!((t.arrival_rate() - 1000.0 / 30.0).abs() < 1e-9);
    }

    #[test]
    fn downlink_flows_aggregate_on_the_ap() {
        let mut s = Scenario::new(AcTable::default(), vec![group("data", 2, &[1])]).unwrap();
        s.capacity = Some(CapacitySpec {
            direction: FlowDirection::TwoWay,
            traffic: TrafficDescriptor::cbr(3, 80, 10.0),
            max_flows: 100,
        });
        let with = s.with_flows(5).unwrap();
        let ap = with.access_point().unwrap();
        assert_eq!(ap.traffic_for(3).unwrap().flows, 5);
        let table = with.traffic_classes().unwrap();
        let ap_class = table.class_of(ap, 3).unwrap();
        assert!((table.classes[ap_class].arrival_rate() - 500.0).abs() < 1e-9);
        let up = with.stations.iter().find(|s| s.name == "capacity_uplink").unwrap();
        assert_eq!(table.classes[table.class_of(up, 3).unwrap()].stations, 5);
    }
}
