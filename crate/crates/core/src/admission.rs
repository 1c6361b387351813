//! Traffic-stream admission control at the access point.
//!
//! Admitted streams are folded into a base scenario: uplink streams become
//! stations of their own, downlink streams are queued at the access point.
//! A request is admitted iff every nonsaturated class of the resulting
//! configuration keeps `ρ ≤ ρ_th`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::capacity::{CapacityModel, CapacitySolution, Utilization};
use crate::error::{Error, Result};
use crate::scenario::{Scenario, StationSpec, TrafficClass, TrafficDescriptor, TrafficKind, NUM_ACS};

/// 802.1D user priority to access category.
pub fn ac_for_priority(up: u8) -> Option<usize> {
    match up {
        1 | 2 => Some(0),
        0 | 3 => Some(1),
        4 | 5 => Some(2),
        6 | 7 => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// Traffic specification carried by an ADDTS request.
///
/// `mean_packet_bytes` is the MAC service data unit size, headers included,
/// so the packet rate is `R / (8 L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tspec {
    pub tsid: String,
    pub up: u8,
    pub direction: Direction,
    pub station: String,
    pub mean_rate_bps: f64,
    pub mean_packet_bytes: u32,
}

impl Tspec {
    fn check(&self) -> std::result::Result<usize, String> {
        if !(self.mean_rate_bps > 0.0 && self.mean_rate_bps.is_finite()) {
            return Err("mean rate must be positive".into());
        }
        if self.mean_packet_bytes == 0 {
            return Err("mean packet size must be positive".into());
        }
        if self.station.is_empty() {
            return Err("station identifier is empty".into());
        }
        ac_for_priority(self.up).ok_or_else(|| format!("user priority {} out of range", self.up))
    }

    fn packet_rate(&self) -> f64 {
        self.mean_rate_bps / (8.0 * self.mean_packet_bytes as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Admit,
    Reject(String),
    /// The request itself was invalid (unknown TSID, duplicate TSID).
    Error(String),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Admit => "admit",
            Verdict::Reject(_) => "reject",
            Verdict::Error(_) => "error",
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            Verdict::Admit => None,
            Verdict::Reject(r) | Verdict::Error(r) => Some(r),
        }
    }
}

/// Outcome of one request.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub tsid: String,
    pub verdict: Verdict,
    /// Largest utilization among nonsaturated classes of the evaluated
    /// configuration. A lower bound when the check stopped early.
    pub max_rho: Option<f64>,
    pub binding_class: Option<String>,
    /// Per-class utilization of the evaluated configuration.
    pub rho: Vec<(String, f64)>,
}

impl Decision {
    fn plain(tsid: &str, verdict: Verdict) -> Self {
        Decision {
            tsid: tsid.to_owned(),
            verdict,
            max_rho: None,
            binding_class: None,
            rho: Vec::new(),
        }
    }

    pub fn admitted(&self) -> bool {
        self.verdict == Verdict::Admit
    }
}

/// Admitted-flow table and the base configuration it is layered on.
///
/// Requests are processed one at a time through `&mut self`; read-only
/// queries may run between them.
#[derive(Debug)]
pub struct AdmissionController {
    base: Scenario,
    model: Arc<CapacityModel>,
    rho_threshold: f64,
    admitted: Vec<Tspec>,
    last: Option<CapacitySolution>,
}

impl AdmissionController {
    pub fn new(base: Scenario) -> Self {
        let model = Arc::new(CapacityModel::for_scenario(&base));
        Self::with_model(base, model)
    }

    /// Controller sharing a service-time memo with other users of `model`.
    pub fn with_model(base: Scenario, model: Arc<CapacityModel>) -> Self {
        AdmissionController {
            rho_threshold: base.admission.rho_threshold,
            base,
            model,
            admitted: Vec::new(),
            last: None,
        }
    }

    pub fn with_threshold(mut self, rho_threshold: f64) -> Result<Self> {
        if !(rho_threshold > 0.0 && rho_threshold <= 1.0) {
            return Err(Error::config("admission.rho_threshold", "must lie in (0, 1]"));
        }
        self.rho_threshold = rho_threshold;
        Ok(self)
    }

    pub fn rho_threshold(&self) -> f64 {
        self.rho_threshold
    }

    pub fn admitted(&self) -> &[Tspec] {
        &self.admitted
    }

    /// Utilization of the current configuration as of the last admission;
    /// `None` after a deletion or before the first admission.
    pub fn last_solution(&self) -> Option<&CapacitySolution> {
        self.last.as_ref()
    }

    pub fn model(&self) -> &Arc<CapacityModel> {
        &self.model
    }

    /// Scenario with the admitted streams plus `extra` folded into the base.
    pub fn scenario_with(&self, extra: Option<&Tspec>) -> Result<Scenario> {
        build_scenario(&self.base, self.admitted.iter().chain(extra))
    }

    pub fn addts(&mut self, tspec: Tspec) -> Decision {
        let ac = match tspec.check() {
            Ok(ac) => ac,
            Err(reason) => return Decision::plain(&tspec.tsid, Verdict::Reject(reason)),
        };
        if self.base.acs.get(ac).is_none() {
            let reason = format!("unmapped user priority {}: AC{ac} is not configured", tspec.up);
            return Decision::plain(&tspec.tsid, Verdict::Reject(reason));
        }
        if self.admitted.iter().any(|t| t.tsid == tspec.tsid) {
            return Decision::plain(&tspec.tsid, Verdict::Error(format!("TSID `{}` already admitted", tspec.tsid)));
        }
        match self.evaluate(&tspec) {
            Ok((mut decision, check)) => {
                if check.passes(self.rho_threshold) {
                    self.admitted.push(tspec);
                    if let Utilization::Converged(solution) = check {
                        self.last = Some(solution);
                    }
                } else {
                    let (label, rho) = (decision.binding_class.clone(), decision.max_rho);
                    decision.verdict = Verdict::Reject(format!(
                        "utilization {:.4} of {} exceeds {}",
                        rho.unwrap_or(f64::NAN),
                        label.as_deref().unwrap_or("?"),
                        self.rho_threshold
                    ));
                }
                decision
            }
            // Fail closed.
            Err(e) => Decision::plain(&tspec.tsid, Verdict::Reject(format!("model error: {e}"))),
        }
    }

    fn evaluate(&self, tspec: &Tspec) -> Result<(Decision, Utilization)> {
        let scenario = self.scenario_with(Some(tspec))?;
        let table = scenario.traffic_classes()?;
        let check = self.model.check_threshold(&table, self.rho_threshold)?;
        let rho = match &check {
            Utilization::Converged(s) => &s.rho,
            Utilization::Exceeded { rho, .. } => rho,
        };
        let labels: Vec<String> = table.classes.iter().map(TrafficClass::label).collect();
        let binding = check.max_rho();
        let decision = Decision {
            tsid: tspec.tsid.clone(),
            verdict: Verdict::Admit,
            max_rho: binding.map(|(_, r)| r),
            binding_class: binding.map(|(j, _)| labels[j].clone()),
            rho: labels
                .iter()
                .zip(rho)
                .zip(&table.classes)
                .filter(|(_, c)| !c.is_saturated())
                .map(|((l, &r), _)| (l.clone(), r))
                .collect(),
        };
        Ok((decision, check))
    }

    pub fn delts(&mut self, tsid: &str) -> Decision {
        match self.admitted.iter().position(|t| t.tsid == tsid) {
            Some(k) => {
                self.admitted.remove(k);
                self.last = None;
                Decision::plain(tsid, Verdict::Admit)
            }
            None => Decision::plain(tsid, Verdict::Error(format!("unknown TSID `{tsid}`"))),
        }
    }

    pub fn apply(&mut self, event: Event) -> Decision {
        match event {
            Event::Add(tspec) => self.addts(tspec),
            Event::Delete(tsid) => self.delts(&tsid),
        }
    }

    /// Process every event in order.
    pub fn replay(&mut self, events: impl IntoIterator<Item = Event>) -> Vec<Decision> {
        events.into_iter().map(|e| self.apply(e)).collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            rho_threshold: self.rho_threshold,
            admitted: self.admitted.clone(),
        }
    }

    /// Reinstate a snapshot without re-running the admission tests.
    pub fn restore(&mut self, snapshot: Snapshot) -> Result<()> {
        for tspec in &snapshot.admitted {
            tspec
                .check()
                .map_err(|m| Error::config(format!("admitted.{}", tspec.tsid), m))?;
        }
        build_scenario(&self.base, snapshot.admitted.iter())?;
        self.rho_threshold = snapshot.rho_threshold;
        self.admitted = snapshot.admitted;
        self.last = None;
        Ok(())
    }
}

/// Fold streams into the base scenario.
///
/// Streams of one station on one AC share a queue. Identical streams
/// aggregate as parallel flows; differing ones merge into a single source
/// with the summed bit rate and the rate-weighted mean packet size.
/// Stations with identical traffic form one group.
fn build_scenario<'a>(base: &Scenario, tspecs: impl Iterator<Item = &'a Tspec>) -> Result<Scenario> {
    let mut uplink: BTreeMap<&str, [Vec<&Tspec>; NUM_ACS]> = BTreeMap::new();
    let mut downlink: [Vec<&Tspec>; NUM_ACS] = Default::default();
    for t in tspecs {
        let ac = ac_for_priority(t.up).ok_or_else(|| Error::domain(format!("bad user priority {}", t.up)))?;
        match t.direction {
            Direction::Uplink => uplink.entry(&t.station).or_default()[ac].push(t),
            Direction::Downlink => downlink[ac].push(t),
        }
    }
    let mut next = base.clone();

    let mut groups: Vec<(Vec<TrafficDescriptor>, u32)> = Vec::new();
    for queues in uplink.values() {
        let traffic: Vec<TrafficDescriptor> = (0..NUM_ACS)
            .filter(|&ac| !queues[ac].is_empty())
            .map(|ac| aggregate(ac, &queues[ac]))
            .collect();
        match groups.iter_mut().find(|(t, _)| *t == traffic) {
            Some((_, count)) => *count += 1,
            None => groups.push((traffic, 1)),
        }
    }
    for (k, (traffic, count)) in groups.into_iter().enumerate() {
        let mut group = StationSpec::new(format!("tspec_uplink_{k}"), count, traffic);
        if next.stations.iter().any(|s| !s.ap && s.activity == group.activity && s.class_tag.is_none()) {
            group.class_tag = Some(format!("ts{k}"));
        }
        next.stations.push(group);
    }

    for (ac, queue) in downlink.iter().enumerate().filter(|(_, q)| !q.is_empty()) {
        let traffic = aggregate(ac, queue);
        let ap = match next.stations.iter_mut().find(|s| s.ap) {
            Some(ap) => ap,
            None => {
                next.stations.push(StationSpec::access_point(Vec::new()));
                next.stations.last_mut().expect("just pushed")
            }
        };
        if ap.is_active(ac) {
            return Err(Error::domain(format!(
                "access point already runs configured AC{ac} traffic; downlink streams cannot share it"
            )));
        }
        ap.activity[ac] = 1;
        ap.traffic.push(traffic);
    }
    next.validate()?;
    Ok(next)
}

fn aggregate(ac: usize, streams: &[&Tspec]) -> TrafficDescriptor {
    let first = streams[0];
    let identical = streams
        .iter()
        .all(|t| t.mean_rate_bps == first.mean_rate_bps && t.mean_packet_bytes == first.mean_packet_bytes);
    let (rate, bytes, flows) = if identical {
        (first.mean_rate_bps, first.mean_packet_bytes, streams.len() as u32)
    } else {
        let rate: f64 = streams.iter().map(|t| t.mean_rate_bps).sum();
        let packets: f64 = streams.iter().map(|t| t.packet_rate()).sum();
        let bytes = (rate / (8.0 * packets)).round().max(1.0) as u32;
        (rate, bytes, 1)
    };
    TrafficDescriptor {
        ac,
        kind: TrafficKind::Cbr,
        rate_bps: Some(rate),
        packet_bytes: bytes,
        interval_ms: None,
        trace_path: None,
        flows,
        header_bytes: Some(0),
    }
}

/// Persisted admitted-flow table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub rho_threshold: f64,
    #[serde(default)]
    pub admitted: Vec<Tspec>,
}

impl Snapshot {
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(document: &str) -> Result<Self> {
        Ok(toml::from_str(document)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Add(Tspec),
    Delete(String),
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Add(t) => {
                let dir = match t.direction {
                    Direction::Uplink => "up",
                    Direction::Downlink => "down",
                };
                write!(
                    f,
                    "ADDTS {} {} {dir} {} {} {}",
                    t.tsid, t.up, t.station, t.mean_rate_bps, t.mean_packet_bytes
                )
            }
            Event::Delete(tsid) => write!(f, "DELTS {tsid}"),
        }
    }
}

/// Parse an event stream: one record per line,
/// `ADDTS tsid up dir station R L` or `DELTS tsid`, optionally preceded by a
/// timestamp in seconds. `dir` is `up`/`uplink` or `down`/`downlink`. Blank
/// lines and `#` comments are skipped. Timestamps must not decrease.
pub fn parse_events(text: &str) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    let mut clock = f64::NEG_INFINITY;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let err = |message: String| Error::Record { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = content.split_whitespace().collect();
        if let Ok(t) = fields[0].parse::<f64>() {
            if !(t >= clock) {
                return Err(err(format!("timestamp {t} is earlier than {clock}")));
            }
            clock = t;
            fields.remove(0);
        }
        match fields.first().map(|s| s.to_ascii_uppercase()).as_deref() {
            Some("ADDTS") => {
                if fields.len() != 7 {
                    return Err(err(format!("ADDTS takes 6 fields, found {}", fields.len() - 1)));
                }
                let up: u8 = fields[2].parse().map_err(|_| err(format!("bad user priority `{}`", fields[2])))?;
                let direction = match fields[3].to_ascii_lowercase().as_str() {
                    "up" | "uplink" => Direction::Uplink,
                    "down" | "downlink" => Direction::Downlink,
                    other => return Err(err(format!("bad direction `{other}`"))),
                };
                let rate: f64 = fields[5].parse().map_err(|_| err(format!("bad rate `{}`", fields[5])))?;
                let bytes: u32 = fields[6].parse().map_err(|_| err(format!("bad packet size `{}`", fields[6])))?;
                let tspec = Tspec {
                    tsid: fields[1].to_owned(),
                    up,
                    direction,
                    station: fields[4].to_owned(),
                    mean_rate_bps: rate,
                    mean_packet_bytes: bytes,
                };
                tspec.check().map_err(err)?;
                events.push(Event::Add(tspec));
            }
            Some("DELTS") => {
                if fields.len() != 2 {
                    return Err(err(format!("DELTS takes 1 field, found {}", fields.len() - 1)));
                }
                events.push(Event::Delete(fields[1].to_owned()));
            }
            _ => return Err(err(format!("unknown record `{content}`"))),
        }
    }
    Ok(events)
}

/// Decision log as CSV with columns `tsid,decision,max_rho,binding_tc,reason`.
pub fn write_decision_log<W: std::io::Write>(decisions: &[Decision], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tsid", "decision", "max_rho", "binding_tc", "reason"])
        .map_err(csv_error)?;
    for d in decisions {
        w.write_record([
            d.tsid.as_str(),
            d.verdict.label(),
            &d.max_rho.map(|r| format!("{r:.6}")).unwrap_or_default(),
            d.binding_class.as_deref().unwrap_or(""),
            d.verdict.reason().unwrap_or(""),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::domain(format!("CSV: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AcTable, CapacitySpec, FlowDirection};

    fn base() -> Scenario {
        let mut s = Scenario::new(AcTable::default(), vec![StationSpec::new("bg", 1, vec![TrafficDescriptor::saturated(1, 1000)])])
            .unwrap();
        s.stations.clear();
        s.capacity = Some(CapacitySpec {
            direction: FlowDirection::TwoWay,
            traffic: TrafficDescriptor::cbr(3, 80, 10.0),
            max_flows: 400,
        });
        s
    }

    fn voice(tsid: &str, dir: Direction, station: &str) -> Tspec {
        Tspec {
            tsid: tsid.into(),
            up: 6,
            direction: dir,
            station: station.into(),
            mean_rate_bps: 96_000.0,
            mean_packet_bytes: 120,
        }
    }

    #[test]
    fn priority_mapping() {
        let acs: Vec<Option<usize>> = (0..9).map(ac_for_priority).collect();
        assert_eq!(
            acs,
            vec![Some(1), Some(0), Some(0), Some(1), Some(2), Some(2), Some(3), Some(3), None]
        );
    }

    #[test]
    fn first_flow_on_an_idle_bss_is_admitted() {
        let mut c = AdmissionController::new(base());
        let d = c.addts(voice("1", Direction::Uplink, "phone1"));
        assert!(d.admitted(), "{d:?}");
        assert!(d.max_rho.unwrap() < 0.1);
        assert_eq!(c.admitted().len(), 1);
    }

    #[test]
    fn unmapped_priority_is_rejected() {
        let mut s = base();
        s.acs.0[2] = None;
        let mut c = AdmissionController::new(s);
        let mut t = voice("v", Direction::Uplink, "cam");
        t.up = 5;
        let d = c.addts(t);
        assert!(matches!(d.verdict, Verdict::Reject(ref r) if r.contains("unmapped")));
        assert!(c.admitted().is_empty());
    }

    #[test]
    fn delete_unknown_is_an_error_and_leaves_state() {
        let mut c = AdmissionController::new(base());
        c.addts(voice("1", Direction::Uplink, "p"));
        let before = c.snapshot();
        let d = c.delts("nope");
        assert!(matches!(d.verdict, Verdict::Error(_)));
        assert_eq!(c.snapshot(), before);
        assert!(c.delts("1").admitted());
        assert!(c.admitted().is_empty());
    }

    #[test]
    fn identical_streams_match_the_capacity_template() {
        let c = {
            let mut c = AdmissionController::new(base());
            for k in 0..3 {
                c.addts(voice(&format!("u{k}"), Direction::Uplink, &format!("p{k}")));
                c.addts(voice(&format!("d{k}"), Direction::Downlink, &format!("p{k}")));
            }
            c
        };
        let ours = c.scenario_with(None).unwrap().traffic_classes().unwrap();
        let template = base().with_flows(3).unwrap().traffic_classes().unwrap();
        assert_eq!(ours.counts(), template.counts());
        for (a, b) in ours.classes.iter().zip(&template.classes) {
            assert_eq!(a.traffic.msdu_bytes(), b.traffic.msdu_bytes());
            assert!((a.arrival_rate() - b.arrival_rate()).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_streams_keep_the_packet_rate() {
        let a = voice("a", Direction::Downlink, "x");
        let mut b = voice("b", Direction::Downlink, "y");
        b.mean_rate_bps = 24_000.0;
        b.mean_packet_bytes = 60;
        let d = aggregate(3, &[&a, &b]);
        assert_eq!(d.rate_bps, Some(120_000.0));
        let mut d = d;
        d.normalize("t").unwrap();
        assert!((d.arrival_rate() - (a.packet_rate() + b.packet_rate())).abs() < 1e-9);
    }

    #[test]
    fn parse_records() {
        let text = "# header\n\n0.0 ADDTS 7 6 up sta1 96000 120\nDELTS 7  # done\naddts 8 4 downlink sta2 1e5 821\n";
        let events = parse_events(text).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[1], Event::Delete("7".into()));
        match &events[2] {
            Event::Add(t) => {
                assert_eq!(t.direction, Direction::Downlink);
                assert_eq!(t.mean_rate_bps, 1e5);
            }
            other => panic!("{other:?}"),
        }
        // Round trip through Display.
        let again = parse_events(&events.iter().map(|e| e.to_string() + "\n").collect::<String>()).unwrap();
        assert_eq!(again, events);
        assert!(parse_events("").unwrap().is_empty());
    }

    #[test]
    fn malformed_records_are_line_addressed() {
        for (text, line) in [
            ("ADDTS 1 6 up s 96000\n", 1),
            ("DELTS 1\nADDTS 1 9 up s 1 1\n", 2),
            ("\n\nFOO\n", 3),
            ("2 DELTS a\n1 DELTS b\n", 2),
            ("ADDTS 1 6 sideways s 1 1\n", 1),
            ("ADDTS 1 6 up s 0 120\n", 1),
        ] {
            match parse_events(text) {
                Err(Error::Record { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut c = AdmissionController::new(base());
        c.addts(voice("1", Direction::Uplink, "p"));
        c.addts(voice("2", Direction::Downlink, "p"));
        let snap = c.snapshot();
        let text = snap.to_toml_string().unwrap();
        let back = Snapshot::from_toml_str(&text).unwrap();
        assert_eq!(back, snap);
        let mut fresh = AdmissionController::new(base());
        fresh.restore(back).unwrap();
        assert_eq!(fresh.admitted(), c.admitted());
    }

    #[test]
    fn decision_log_columns() {
        let mut c = AdmissionController::new(base());
        let log = c.replay(vec![Event::Add(voice("1", Direction::Uplink, "p")), Event::Delete("9".into())]);
        let mut buf = Vec::new();
        write_decision_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tsid,decision,max_rho,binding_tc,reason");
        assert!(lines[1].starts_with("1,admit,0.0"));
        assert!(lines[2].starts_with("9,error,,,"));
    }
}
