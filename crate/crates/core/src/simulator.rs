//! Discrete-event simulation of an EDCA basic service set.
//!
//! Time is kept in integer nanoseconds. All contention happens on slot
//! boundaries measured from the end of the last busy period plus SIFS:
//! an AC with AIFSN `a` and backoff counter `c` transmits at boundary
//! `a + c` if the medium stays idle. Each boundary at or after the AC's own
//! AIFS either decrements the counter or starts a transmission, so counters
//! are updated lazily once per busy period instead of once per slot.
//!
//! After a collision every station defers for the ACK timeout before
//! sensing again, so collision and success periods match the airtime
//! module exactly.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{AcParams, Scenario, SimulationSpec, TrafficClassTable, TrafficKind};
use crate::timing::Airtime;

/// Run settings; defaults come from the scenario's simulation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub duration_s: f64,
    pub warmup_s: f64,
    pub deadline_ms: f64,
    pub wired_delay_ms: f64,
    pub buffer_packets: usize,
    /// Keep one record per packet.
    pub trace_packets: bool,
}

impl From<&SimulationSpec> for SimOptions {
    fn from(spec: &SimulationSpec) -> Self {
        SimOptions {
            duration_s: spec.duration_s,
            warmup_s: spec.warmup_s,
            deadline_ms: spec.deadline_ms,
            wired_delay_ms: spec.wired_delay_ms,
            buffer_packets: spec.buffer_packets,
            trace_packets: false,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_s >= 0.0 && self.duration_s > self.warmup_s) {
            return Err(Error::config("simulation.duration_s", "duration must exceed the warmup"));
        }
        if self.buffer_packets == 0 {
            return Err(Error::config("simulation.buffer_packets", "must be positive"));
        }
        if !(self.deadline_ms > 0.0 && self.wired_delay_ms >= 0.0) {
            return Err(Error::config("simulation.deadline_ms", "deadline must be positive"));
        }
        Ok(())
    }
}

/// Width of one delay histogram bin.
pub const DELAY_BIN_MS: f64 = 1.0;

/// Per-class results, measured after the warmup.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub ac: usize,
    pub saturated: bool,
    /// Packets generated after the warmup.
    pub offered: u64,
    /// Delivered within the deadline.
    pub delivered: u64,
    /// Delivered past the deadline (dropped at the sink).
    pub late: u64,
    pub retry_drops: u64,
    pub buffer_drops: u64,
    /// Fraction of the measured time spent on this class's successful
    /// data frames.
    pub throughput: f64,
    /// Head-of-line to success or drop.
    pub mean_service_time_us: f64,
    /// Head-of-line to the start of the successful transmission.
    pub mean_access_delay_us: f64,
    /// Arrival to delivery over the wireless hop, on-time packets only.
    pub mean_delay_us: f64,
    pub attempts: u64,
    pub external_collisions: u64,
    pub internal_collisions: u64,
    /// On-time deliveries per `DELAY_BIN_MS` bin of wireless delay.
    pub delay_histogram: Vec<u64>,
    /// Number of active queues, the tagged one included, seen each time a
    /// packet of this class leaves its queue.
    pub activity: Vec<u64>,
    /// Time, in seconds summed over the class's queues, that a queue of
    /// this class was active while `k` queues were active in total.
    pub activity_time: Vec<f64>,
    /// Packets offered per simulated second after the warmup, per queue.
    pub offered_rate: f64,
    services: u64,
    service_sum_ns: u128,
    access_sum_ns: u128,
    delay_sum_ns: u128,
}

impl ClassMetrics {
    /// Source and sink losses over offered packets.
    pub fn loss_ratio(&self) -> f64 {
        if self.offered == 0 {
            return 0.0;
        }
        (self.late + self.retry_drops + self.buffer_drops) as f64 / self.offered as f64
    }

    /// Empirical `Pr(k active | tagged active)`.
    pub fn activity_pdf(&self) -> Vec<f64> {
        let total: u64 = self.activity.iter().sum();
        if total == 0 {
            return Vec::new();
        }
        self.activity.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Time-averaged `Pr(k active | tagged active)`.
    pub fn activity_time_pdf(&self) -> Vec<f64> {
        let total: f64 = self.activity_time.iter().sum();
        if total == 0.0 {
            return Vec::new();
        }
        self.activity_time.iter().map(|&t| t / total).collect()
    }
}

/// Whole-run packet accounting, warmup included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Conservation {
    pub offered: u64,
    pub delivered: u64,
    pub late: u64,
    pub retry_drops: u64,
    pub buffer_drops: u64,
    pub residual: u64,
}

impl Conservation {
    pub fn balanced(&self) -> bool {
        self.offered == self.delivered + self.late + self.retry_drops + self.buffer_drops + self.residual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Delivered,
    Late,
    RetryDrop,
    BufferDrop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketRecord {
    pub station: usize,
    pub ac: usize,
    pub class: usize,
    pub enqueue_ns: u64,
    pub first_attempt_ns: Option<u64>,
    pub end_ns: u64,
    pub outcome: Outcome,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub seed: u64,
    pub measured_s: f64,
    pub classes: Vec<ClassMetrics>,
    /// `counts[n-1]`: idle periods that reached backoff slot `n`, counted
    /// from the smallest AIFS. The last entry collects longer periods.
    pub slot_reached: Vec<u64>,
    pub conservation: Conservation,
    #[serde(skip)]
    pub trace: Vec<PacketRecord>,
}

impl SimMetrics {
    /// Empirical slot occupancy `b'_n` over the first `len` slots.
    pub fn slot_occupancy(&self, len: usize) -> Vec<f64> {
        let head = &self.slot_reached[..len.min(self.slot_reached.len())];
        let total: u64 = head.iter().sum();
        head.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
    }

    pub fn total_throughput(&self) -> f64 {
        self.classes.iter().map(|c| c.throughput).sum()
    }

    /// Largest loss ratio among nonsaturated classes.
    pub fn max_loss(&self) -> f64 {
        self.classes
            .iter()
            .filter(|c| !c.saturated)
            .map(ClassMetrics::loss_ratio)
            .fold(0.0, f64::max)
    }
}

/// Video trace: one `(frame interval, payload bytes)` pair per frame.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<(f64, u32)>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_trace(&text)
}

/// Parse `frame_interval_ms payload_bytes` lines; `#` starts a comment.
pub fn parse_trace(text: &str) -> Result<Vec<(f64, u32)>> {
    let mut frames = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let err = |message: String| Error::Record { line: k + 1, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", fields.len())));
        }
        let interval: f64 = fields[0].parse().map_err(|_| err(format!("bad interval `{}`", fields[0])))?;
        let bytes: u32 = fields[1].parse().map_err(|_| err(format!("bad size `{}`", fields[1])))?;
        if !(interval > 0.0) || bytes == 0 {
            return Err(err("interval and size must be positive".into()));
        }
        frames.push((interval, bytes));
    }
    if frames.is_empty() {
        return Err(Error::Record {
            line: 0,
            message: "trace has no frames".into(),
        });
    }
    Ok(frames)
}

fn ns(us: f64) -> u64 {
    (us * 1000.0).round() as u64
}

#[derive(Debug, Clone)]
struct Packet {
    arrival: u64,
    bytes: u32,
    hol: u64,
    first_attempt: Option<u64>,
    retries: u32,
    measured: bool,
}

#[derive(Debug)]
struct Queue {
    station: usize,
    ac: usize,
    class: usize,
    params: AcParams,
    aifsn: u64,
    saturated: bool,
    saturated_bytes: u32,
    buffer: VecDeque<Packet>,
    /// Backoff counter as of the start of the current idle period.
    counter: u32,
    /// Completion time of the last service; the next packet cannot reach
    /// the head of the queue earlier.
    free_at: u64,
    active: bool,
}

/// Busy period in progress.
#[derive(Debug)]
enum Busy {
    Success { queue: usize, start: u64, end: u64, payload: u64 },
    Collision { queues: Vec<usize>, end: u64 },
}

impl Busy {
    fn end(&self) -> u64 {
        match self {
            Busy::Success { end, .. } | Busy::Collision { end, .. } => *end,
        }
    }
}

#[derive(Debug)]
enum Source {
    Cbr { interval: u64, bytes: u32 },
    Trace { frames: Arc<Vec<(u64, u32)>>, header: u32, position: usize },
}

#[derive(Debug)]
struct Flow {
    queue: usize,
    source: Source,
}

struct Engine<'a> {
    opts: &'a SimOptions,
    air: Airtime,
    rng: ChaCha8Rng,
    queues: Vec<Queue>,
    flows: Vec<Flow>,
    arrivals: BinaryHeap<Reverse<(u64, usize)>>,
    slot: u64,
    sifs: u64,
    warmup: u64,
    end: u64,
    deadline: u64,
    wired: u64,
    min_aifsn: u64,
    payload_cache: HashMap<u32, u64>,
    metrics: Vec<ClassMetrics>,
    conservation: Conservation,
    slot_reached: Vec<u64>,
    trace: Vec<PacketRecord>,
    active_total: usize,
    active_by_class: Vec<u32>,
    last_change: u64,
}

const SLOT_HISTOGRAM_LEN: usize = 1024;

/// Simulate `scenario` for one seed.
pub fn run(scenario: &Scenario, opts: &SimOptions, seed: u64) -> Result<SimMetrics> {
    opts.validate()?;
    let table = scenario.traffic_classes()?;
    let mut engine = Engine::new(scenario, &table, opts, seed)?;
    engine.simulate();
    Ok(engine.finish(seed))
}

impl<'a> Engine<'a> {
    fn new(scenario: &Scenario, table: &TrafficClassTable, opts: &'a SimOptions, seed: u64) -> Result<Self> {
        let phy = &scenario.phy;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut queues = Vec::new();
        let mut flows = Vec::new();
        let mut traces: HashMap<std::path::PathBuf, Arc<Vec<(u64, u32)>>> = HashMap::new();
        let mut station = 0;
        for spec in &scenario.stations {
            for _ in 0..spec.count {
                for traffic in &spec.traffic {
                    let class = table
                        .class_of(spec, traffic.ac)
                        .expect("every station queue belongs to a class");
                    let params = *scenario.acs.get(traffic.ac).expect("validated");
                    let q = queues.len();
                    queues.push(Queue {
                        station,
                        ac: traffic.ac,
                        class,
                        params,
                        aifsn: params.aifsn as u64,
                        saturated: traffic.is_saturated(),
                        saturated_bytes: traffic.msdu_bytes(),
                        buffer: VecDeque::new(),
                        counter: rng.gen_range(0..=params.window(1)),
                        free_at: 0,
                        active: false,
                    });
                    match traffic.kind {
                        TrafficKind::Saturated => {}
                        TrafficKind::Cbr => {
                            let interval_ms = traffic.stream_interval_ms().expect("validated CBR");
                            for _ in 0..traffic.flows {
                                flows.push(Flow {
                                    queue: q,
                                    source: Source::Cbr {
                                        interval: ns(interval_ms * 1000.0),
                                        bytes: traffic.msdu_bytes(),
                                    },
                                });
                            }
                        }
                        TrafficKind::Trace => {
                            let path = traffic.trace_path.clone().ok_or_else(|| {
                                Error::config(format!("stations.{}.traffic", spec.name), "trace source without `trace_path`")
                            })?;
                            let frames = match traces.get(&path) {
                                Some(f) => f.clone(),
                                None => {
                                    let f: Vec<(u64, u32)> = load_trace(&path)?
                                        .into_iter()
                                        .map(|(ms, b)| (ns(ms * 1000.0), b))
                                        .collect();
                                    let f = Arc::new(f);
                                    traces.insert(path.clone(), f.clone());
                                    f
                                }
                            };
                            for _ in 0..traffic.flows {
                                flows.push(Flow {
                                    queue: q,
                                    source: Source::Trace {
                                        frames: frames.clone(),
                                        header: traffic.header(),
                                        position: 0,
                                    },
                                });
                            }
                        }
                    }
                }
                station += 1;
            }
        }
        let metrics = table
            .classes
            .iter()
            .map(|c| ClassMetrics {
                label: c.label(),
                ac: c.ac,
                saturated: c.is_saturated(),
                ..ClassMetrics::default()
            })
            .collect();
        let min_aifsn = queues.iter().map(|q| q.aifsn).min().unwrap_or(0);
        let mut engine = Engine {
            opts,
            air: Airtime::new(phy, scenario.access),
            rng,
            queues,
            flows,
            arrivals: BinaryHeap::new(),
            slot: ns(phy.slot_time_us),
            sifs: ns(phy.sifs_us),
            warmup: ns(opts.warmup_s * 1e6),
            end: ns(opts.duration_s * 1e6),
            deadline: ns(opts.deadline_ms * 1000.0),
            wired: ns(opts.wired_delay_ms * 1000.0),
            min_aifsn,
            payload_cache: HashMap::new(),
            metrics,
            conservation: Conservation::default(),
            slot_reached: vec![0; SLOT_HISTOGRAM_LEN + 1],
            trace: Vec::new(),
            active_total: 0,
            active_by_class: vec![0; table.len()],
            last_change: 0,
        };
        // Random phase over one interval; trace flows also start at a random frame.
        for f in 0..engine.flows.len() {
            let first = match &mut engine.flows[f].source {
                Source::Cbr { interval, .. } => engine.rng.gen_range(0..(*interval).max(1)),
                Source::Trace { frames, position, .. } => {
                    *position = engine.rng.gen_range(0..frames.len());
                    engine.rng.gen_range(0..frames[*position].0.max(1))
                }
            };
            engine.arrivals.push(Reverse((first, f)));
        }
        for q in 0..engine.queues.len() {
            if engine.queues[q].saturated {
                engine.refill(q, 0);
            }
        }
        Ok(engine)
    }

    fn payload_ns(&mut self, bytes: u32) -> u64 {
        let air = &self.air;
        *self.payload_cache.entry(bytes).or_insert_with(|| ns(air.payload(bytes)))
    }

    /// Queue `q` turns active or idle at `now`.
    fn set_active(&mut self, q: usize, active: bool, now: u64) {
        if self.queues[q].active == active {
            return;
        }
        if now > self.warmup {
            let dt = (now - self.last_change.max(self.warmup)) as f64 / 1e9;
            let k = self.active_total;
            for (m, &n) in self.metrics.iter_mut().zip(&self.active_by_class) {
                if n > 0 {
                    if m.activity_time.len() <= k {
                        m.activity_time.resize(k + 1, 0.0);
                    }
                    m.activity_time[k] += dt * n as f64;
                }
            }
        }
        self.last_change = now;
        let class = self.queues[q].class;
        self.queues[q].active = active;
        if active {
            self.active_total += 1;
            self.active_by_class[class] += 1;
        } else {
            self.active_total -= 1;
            self.active_by_class[class] -= 1;
        }
    }

    /// A packet reached the head of queue `q` at `now`.
    fn head_of_line(&mut self, q: usize, now: u64) {
        let queue = &mut self.queues[q];
        let packet = queue.buffer.front_mut().expect("nonempty");
        packet.hol = now;
    }

    fn refill(&mut self, q: usize, now: u64) {
        let bytes = self.queues[q].saturated_bytes;
        self.offer(q, now, bytes);
    }

    fn offer(&mut self, q: usize, now: u64, bytes: u32) {
        let measured = now >= self.warmup;
        let class = self.queues[q].class;
        self.conservation.offered += 1;
        if measured {
            self.metrics[class].offered += 1;
        }
        let queue = &mut self.queues[q];
        if !queue.saturated && queue.buffer.len() >= self.opts.buffer_packets {
            self.conservation.buffer_drops += 1;
            if measured {
                self.metrics[class].buffer_drops += 1;
            }
            if self.opts.trace_packets {
                self.trace.push(PacketRecord {
                    station: queue.station,
                    ac: queue.ac,
                    class,
                    enqueue_ns: now,
                    first_attempt_ns: None,
                    end_ns: now,
                    outcome: Outcome::BufferDrop,
                    retries: 0,
                });
            }
            return;
        }
        queue.buffer.push_back(Packet {
            arrival: now,
            bytes,
            hol: now,
            first_attempt: None,
            retries: 0,
            measured,
        });
        if queue.buffer.len() == 1 {
            let at = now.max(queue.free_at);
            self.set_active(q, true, now);
            self.head_of_line(q, at);
        }
    }

    fn arrive(&mut self, now: u64, f: usize) {
        let flow = &mut self.flows[f];
        let q = flow.queue;
        let (bytes, next) = match &mut flow.source {
            Source::Cbr { interval, bytes } => (*bytes, now + *interval),
            Source::Trace { frames, header, position } => {
                let bytes = frames[*position].1 + *header;
                *position = (*position + 1) % frames.len();
                (bytes, now + frames[*position].0)
            }
        };
        self.arrivals.push(Reverse((next, f)));
        self.offer(q, now, bytes);
    }

    /// Earliest transmission boundary of a backlogged queue in the idle
    /// period starting at `t0`.
    fn candidate(&self, q: &Queue, t0: u64) -> u64 {
        let own = t0 + (q.aifsn + q.counter as u64) * self.slot;
        let hol = q.buffer.front().expect("backlogged").hol;
        if hol <= t0 {
            own
        } else {
            own.max(t0 + (hol - t0).div_ceil(self.slot) * self.slot)
        }
    }

    fn draw(&mut self, q: usize, stage: u32) {
        let w = self.queues[q].params.window(stage);
        self.queues[q].counter = self.rng.gen_range(0..=w);
    }

    fn simulate(&mut self) {
        // Reference point of the current idle period: end of the last busy
        // period plus SIFS. Boundaries lie at t0 + k slots.
        let mut t0 = 0u64;
        let mut transmitters: Vec<usize> = Vec::new();
        let mut busy: Option<Busy> = None;
        loop {
            let next_arrival = self.arrivals.peek().map_or(u64::MAX, |Reverse((t, _))| *t);
            if let Some(period) = &busy {
                let end = period.end();
                if next_arrival < end {
                    if next_arrival >= self.end {
                        break;
                    }
                    let Reverse((t, f)) = self.arrivals.pop().expect("peeked");
                    self.arrive(t, f);
                    continue;
                }
                if end >= self.end {
                    break;
                }
                match busy.take().expect("checked") {
                    Busy::Success {
                        queue,
                        start,
                        end,
                        payload,
                    } => self.succeed(queue, start, end, payload),
                    Busy::Collision { queues, end } => {
                        for k in queues {
                            self.fail(k, end);
                        }
                    }
                }
                t0 = end + self.sifs;
                continue;
            }

            let mut t_tx = u64::MAX;
            for q in self.queues.iter().filter(|q| !q.buffer.is_empty()) {
                t_tx = t_tx.min(self.candidate(q, t0));
            }
            if next_arrival <= t_tx {
                if next_arrival >= self.end {
                    break;
                }
                let Reverse((t, f)) = self.arrivals.pop().expect("peeked");
                self.arrive(t, f);
                continue;
            }
            if t_tx >= self.end {
                break;
            }

            transmitters.clear();
            for (k, q) in self.queues.iter().enumerate() {
                if !q.buffer.is_empty() && self.candidate(q, t0) == t_tx {
                    transmitters.push(k);
                }
            }
            let m = (t_tx - t0) / self.slot;
            if t_tx >= self.warmup {
                let n = (m + 1).saturating_sub(self.min_aifsn) as usize;
                self.slot_reached[n.clamp(1, SLOT_HISTOGRAM_LEN + 1) - 1] += 1;
            }
            for (k, q) in self.queues.iter_mut().enumerate() {
                if m >= q.aifsn && !transmitters.contains(&k) {
                    q.counter -= q.counter.min((m - q.aifsn + 1) as u32);
                }
            }

            // Internal contention: per station only the highest AC goes on air.
            let mut on_air: Vec<usize> = Vec::with_capacity(transmitters.len());
            let mut losers: Vec<usize> = Vec::new();
            for &k in &transmitters {
                let station = self.queues[k].station;
                match on_air.iter().position(|&o| self.queues[o].station == station) {
                    Some(pos) => {
                        let other = on_air[pos];
                        if self.queues[k].ac > self.queues[other].ac {
                            losers.push(other);
                            on_air[pos] = k;
                        } else {
                            losers.push(k);
                        }
                    }
                    None => on_air.push(k),
                }
            }
            for &k in &transmitters {
                let class = self.queues[k].class;
                let packet = self.queues[k].buffer.front_mut().expect("backlogged");
                packet.first_attempt.get_or_insert(t_tx);
                if t_tx >= self.warmup {
                    self.metrics[class].attempts += 1;
                }
            }

            if on_air.len() == 1 {
                let k = on_air[0];
                let bytes = self.queues[k].buffer.front().expect("backlogged").bytes;
                let payload = self.payload_ns(bytes);
                busy = Some(Busy::Success {
                    queue: k,
                    start: t_tx,
                    end: t_tx + ns(self.air.success_busy(payload as f64 / 1000.0)),
                    payload,
                });
            } else {
                let mut longest = 0;
                for &k in &on_air {
                    let bytes = self.queues[k].buffer.front().expect("backlogged").bytes;
                    longest = longest.max(self.payload_ns(bytes));
                    if t_tx >= self.warmup {
                        self.metrics[self.queues[k].class].external_collisions += 1;
                    }
                }
                busy = Some(Busy::Collision {
                    end: t_tx + ns(self.air.collision_busy(longest as f64 / 1000.0)),
                    queues: on_air,
                });
            }
            for &k in &losers {
                if t_tx >= self.warmup {
                    self.metrics[self.queues[k].class].internal_collisions += 1;
                }
                self.fail(k, t_tx);
            }
        }
        let end = self.end;
        for q in 0..self.queues.len() {
            self.set_active(q, false, end);
        }
        for q in &self.queues {
            self.conservation.residual += q.buffer.len() as u64;
        }
    }

    fn service_done(&mut self, q: usize, packet: &Packet, now: u64) {
        let class = self.queues[q].class;
        if now >= self.warmup {
            // The departing queue is still counted as active here.
            let active = self.active_total;
            let hist = &mut self.metrics[class].activity;
            if hist.len() <= active {
                hist.resize(active + 1, 0);
            }
            hist[active] += 1;
        }
        if packet.hol >= self.warmup {
            let m = &mut self.metrics[class];
            m.services += 1;
            m.service_sum_ns += (now - packet.hol) as u128;
        }
        self.queues[q].free_at = now;
        if !self.queues[q].buffer.is_empty() {
            self.head_of_line(q, now);
        } else if self.queues[q].saturated {
            self.refill(q, now);
        } else {
            self.set_active(q, false, now);
        }
    }

    fn record(&mut self, q: usize, packet: &Packet, end: u64, outcome: Outcome) {
        if self.opts.trace_packets {
            let queue = &self.queues[q];
            self.trace.push(PacketRecord {
                station: queue.station,
                ac: queue.ac,
                class: queue.class,
                enqueue_ns: packet.arrival,
                first_attempt_ns: packet.first_attempt,
                end_ns: end,
                outcome,
                retries: packet.retries,
            });
        }
    }

    fn succeed(&mut self, q: usize, start: u64, end: u64, payload_ns: u64) {
        let packet = self.queues[q].buffer.pop_front().expect("backlogged");
        let class = self.queues[q].class;
        let delay = end - packet.arrival;
        let late = delay + self.wired > self.deadline && !self.queues[q].saturated;
        if late {
            self.conservation.late += 1;
        } else {
            self.conservation.delivered += 1;
        }
        let m = &mut self.metrics[class];
        if end >= self.warmup {
            m.throughput += payload_ns as f64;
        }
        if packet.measured {
            if late {
                m.late += 1;
            } else {
                m.delivered += 1;
                m.delay_sum_ns += delay as u128;
                let bin = (delay as f64 / (DELAY_BIN_MS * 1e6)) as usize;
                if m.delay_histogram.len() <= bin {
                    m.delay_histogram.resize(bin + 1, 0);
                }
                m.delay_histogram[bin] += 1;
            }
        }
        if packet.hol >= self.warmup {
            m.access_sum_ns += (start - packet.hol) as u128;
        }
        self.record(q, &packet, end, if late { Outcome::Late } else { Outcome::Delivered });
        self.draw(q, 1);
        self.service_done(q, &packet, end);
    }

    fn fail(&mut self, q: usize, end: u64) {
        let limit = self.queues[q].params.retry_limit;
        let packet = self.queues[q].buffer.front_mut().expect("backlogged");
        packet.retries += 1;
        let retries = packet.retries;
        if retries < limit {
            self.draw(q, retries + 1);
            return;
        }
        let packet = self.queues[q].buffer.pop_front().expect("backlogged");
        self.conservation.retry_drops += 1;
        if packet.measured {
            self.metrics[self.queues[q].class].retry_drops += 1;
        }
        self.record(q, &packet, end, Outcome::RetryDrop);
        self.draw(q, 1);
        self.service_done(q, &packet, end);
    }

    fn finish(mut self, seed: u64) -> SimMetrics {
        let measured = (self.end - self.warmup) as f64;
        let mut users = vec![0u64; self.metrics.len()];
        for q in &self.queues {
            users[q.class] += 1;
        }
        for (m, &n) in self.metrics.iter_mut().zip(&users) {
            m.throughput /= measured;
            if m.services > 0 {
                m.mean_service_time_us = m.service_sum_ns as f64 / m.services as f64 / 1000.0;
            }
            let successes = m.delivered + m.late;
            if successes > 0 {
                m.mean_access_delay_us = m.access_sum_ns as f64 / successes as f64 / 1000.0;
            }
            if m.delivered > 0 {
                m.mean_delay_us = m.delay_sum_ns as f64 / m.delivered as f64 / 1000.0;
            }
            m.offered_rate = m.offered as f64 / (measured / 1e9) / n.max(1) as f64;
        }
        SimMetrics {
            seed,
            measured_s: measured / 1e9,
            classes: self.metrics,
            slot_reached: cumulative_reach(&self.slot_reached),
            conservation: self.conservation,
            trace: self.trace,
        }
    }
}

/// Turn "transmission in slot n" counts into "slot n reached" counts.
fn cumulative_reach(tx_in_slot: &[u64]) -> Vec<u64> {
    let mut reached = vec![0; tx_in_slot.len()];
    let mut running = 0;
    for n in (0..tx_in_slot.len()).rev() {
        running += tx_in_slot[n];
        reached[n] = running;
    }
    reached
}

/// Run one simulation per seed, concurrently when the `parallel` feature
/// is on. Results are in seed order.
pub fn run_seeds(scenario: &Scenario, opts: &SimOptions, seeds: &[u64]) -> Result<Vec<SimMetrics>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| run(scenario, opts, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| run(scenario, opts, s)).collect()
    }
}

/// Empirical conditional activity pdf per class, averaged over seeds.
pub fn activity_histogram(scenario: &Scenario, opts: &SimOptions, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    let runs = run_seeds(scenario, opts, seeds)?;
    let classes = runs[0].classes.len();
    let mut pdfs = vec![Vec::new(); classes];
    for run in &runs {
        for (j, c) in run.classes.iter().enumerate() {
            let pdf = c.activity_pdf();
            if pdfs[j].len() < pdf.len() {
                pdfs[j].resize(pdf.len(), 0.0);
            }
            for (k, p) in pdf.iter().enumerate() {
                pdfs[j][k] += p / runs.len() as f64;
            }
        }
    }
    Ok(pdfs)
}

/// One flow count evaluated by the simulation capacity search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimProbe {
    pub flows: u32,
    /// Worst nonsaturated-class loss ratio per seed.
    pub max_loss: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimCapacity {
    pub flows: u32,
    pub probes: Vec<SimProbe>,
}

/// Largest number of template flows whose worst loss ratio stays within
/// `loss_threshold` in a majority of `seeds`. The search gallops outward
/// from `hint` and then bisects, assuming loss grows with the flow count.
pub fn capacity_search(
    base: &Scenario,
    opts: &SimOptions,
    seeds: &[u64],
    loss_threshold: f64,
    hint: u32,
) -> Result<SimCapacity> {
    let max = base
        .capacity
        .as_ref()
        .ok_or_else(|| Error::config("capacity", "scenario has no capacity template"))?
        .max_flows;
    if seeds.is_empty() {
        return Err(Error::config("simulation.seeds", "at least one seed is required"));
    }
    let mut probes: Vec<SimProbe> = Vec::new();
    let mut probe = |n: u32| -> Result<bool> {
        if let Some(p) = probes.iter().find(|p| p.flows == n) {
            return Ok(p.passed);
        }
        let scenario = base.with_flows(n)?;
        let runs = run_seeds(&scenario, opts, seeds)?;
        let max_loss: Vec<f64> = runs.iter().map(SimMetrics::max_loss).collect();
        let good = max_loss.iter().filter(|&&l| l <= loss_threshold).count();
        let passed = 2 * good > seeds.len();
        probes.push(SimProbe {
            flows: n,
            max_loss,
            passed,
        });
        Ok(passed)
    };
    let hint = hint.clamp(1, max);
    let (mut good, mut bad);
    if probe(hint)? {
        good = hint;
        bad = None;
        let mut step = 1;
        while good < max {
            let next = (good + step).min(max);
            if probe(next)? {
                good = next;
                step *= 2;
            } else {
                bad = Some(next);
                break;
            }
        }
    } else {
        bad = Some(hint);
        good = 0;
        let mut step = 1;
        let mut top = hint;
        while top > 1 {
            let next = top.saturating_sub(step).max(1);
            if probe(next)? {
                good = next;
                break;
            }
            top = next;
            bad = Some(next);
            step *= 2;
        }
        if good == 0 {
            return Err(Error::domain("loss threshold is not met even with one flow"));
        }
    }
    if let Some(mut bad) = bad {
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            if probe(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
    }
    probes.sort_by_key(|p| p.flows);
    Ok(SimCapacity { flows: good, probes })
}

/// Per-packet trace as CSV.
pub fn write_trace<W: Write>(records: &[PacketRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "station",
        "ac",
        "class",
        "enqueue_ns",
        "first_attempt_ns",
        "end_ns",
        "outcome",
        "retries",
    ])
    .map_err(crate::admission::csv_error)?;
    for r in records {
        w.write_record([
            r.station.to_string(),
            r.ac.to_string(),
            r.class.to_string(),
            r.enqueue_ns.to_string(),
            r.first_attempt_ns.map(|t| t.to_string()).unwrap_or_default(),
            r.end_ns.to_string(),
            format!("{:?}", r.outcome).to_lowercase(),
            r.retries.to_string(),
        ])
        .map_err(crate::admission::csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AcTable, StationSpec, TrafficDescriptor};

    fn opts(duration_s: f64) -> SimOptions {
        SimOptions {
            duration_s,
            warmup_s: 0.5,
            deadline_ms: 150.0,
            wired_delay_ms: 20.0,
            buffer_packets: 100,
            trace_packets: false,
        }
    }

    fn scenario(stations: Vec<StationSpec>) -> Scenario {
        Scenario::new(AcTable::default(), stations).unwrap()
    }

    #[test]
    fn lone_saturated_station_matches_the_renewal_cycle() {
        let s = scenario(vec![StationSpec::new("s", 1, vec![TrafficDescriptor::saturated(3, 1000)])]);
        let m = run(&s, &opts(20.0), 3).unwrap();
        let air = Airtime::new(&s.phy, s.access);
        let ac = s.acs.get(3).unwrap();
        let tp = air.payload(1000);
        // Every cycle: AIFS, a uniform [0, CWmin] backoff, then the exchange.
        let cycle = air.success_busy(tp) + crate::timing::aifs(ac, &s.phy) + ac.cw_min as f64 / 2.0 * s.phy.slot_time_us;
        let expected = tp / cycle;
        let got = m.classes[0].throughput;
        assert!((got - expected).abs() / expected < 0.01, "{got} vs {expected}");
        assert_eq!(m.classes[0].external_collisions, 0);
        assert!(m.conservation.balanced());
    }

    #[test]
    fn seeds_are_deterministic() {
        let s = scenario(vec![
            StationSpec::new("a", 4, vec![TrafficDescriptor::saturated(1, 1000)]),
            StationSpec::new("b", 3, vec![TrafficDescriptor::cbr(3, 160, 20.0)]),
        ]);
        let a = run(&s, &opts(3.0), 11).unwrap();
        let b = run(&s, &opts(3.0), 11).unwrap();
        assert_eq!(a, b);
        let c = run(&s, &opts(3.0), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn internal_collisions_favour_the_higher_ac() {
        let s = scenario(vec![StationSpec::new(
            "s",
            3,
            vec![TrafficDescriptor::saturated(2, 800), TrafficDescriptor::saturated(3, 800)],
        )]);
        let m = run(&s, &opts(5.0), 1).unwrap();
        let (vi, vo) = (&m.classes[0], &m.classes[1]);
        assert!(vi.internal_collisions > 0);
        assert_eq!(vo.internal_collisions, 0);
        assert!(vo.throughput > vi.throughput);
    }

    #[test]
    fn cbr_stream_alone_is_lossless_and_idle_otherwise() {
        let s = scenario(vec![StationSpec::new("s", 1, vec![TrafficDescriptor::cbr(3, 80, 20.0)])]);
        let mut o = opts(5.0);
        o.trace_packets = true;
        let m = run(&s, &o, 5).unwrap();
        let c = &m.classes[0];
        assert_eq!(c.loss_ratio(), 0.0);
        assert!((c.offered_rate - 50.0).abs() < 1.0);
        assert_eq!(c.activity_pdf(), vec![0.0, 1.0]);
        assert_eq!(c.delay_histogram.iter().sum::<u64>(), c.delivered);
        assert!(m.conservation.balanced());
        assert_eq!(m.trace.len() as u64, m.conservation.offered - m.conservation.residual);
    }

    #[test]
    fn overload_fills_the_buffer() {
        let mut heavy = TrafficDescriptor::cbr(3, 1400, 1.0);
        heavy.flows = 20;
        let s = scenario(vec![StationSpec::new("s", 2, vec![heavy])]);
        let m = run(&s, &opts(3.0), 2).unwrap();
        assert!(m.classes[0].buffer_drops > 0);
        assert!(m.classes[0].loss_ratio() > 0.1);
        assert!(m.conservation.balanced());
    }

    #[test]
    fn trace_parsing() {
        let frames = parse_trace("# ms bytes\n40 1500\n40 669 # B\n").unwrap();
        assert_eq!(frames, vec![(40.0, 1500), (40.0, 669)]);
        assert!(matches!(parse_trace("40\n"), Err(Error::Record { line: 1, .. })));
        assert!(parse_trace("# empty\n").is_err());
    }

    #[test]
    fn reach_counts_are_cumulative() {
        assert_eq!(cumulative_reach(&[3, 2, 0, 1]), vec![6, 3, 1, 1]);
    }
}
