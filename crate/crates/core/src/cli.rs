//! `edca` command-line front end.
//!
//! Every command loads a scenario, expands its sweep, writes one CSV table
//! into `--out` and a `manifest.json` describing the run. Exit codes: 0 on
//! success, 2 for configuration errors, 3 when a solver does not converge,
//! 4 for I/O failures.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use crate::admission::{parse_events, write_decision_log, AdmissionController, Snapshot};
use crate::capacity::{analysis_capacity, CapacityModel};
use crate::error::{Error, Result};
use crate::saturation::solve_fixed_point;
use crate::scenario::{AccessMode, Scenario};
use crate::simulator::{self, capacity_search, run_seeds, SimMetrics, SimOptions};
use crate::timing::exchange_times;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "edca", version, about = "EDCA saturation analysis, capacity estimation and admission control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Basic,
    Rts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated simulation seeds; overrides the scenario.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Admission threshold on ρ; overrides the scenario.
    #[arg(long = "rho-th")]
    pub rho_th: Option<f64>,
    /// Channel access procedure; overrides the scenario.
    #[arg(long, value_enum)]
    pub access: Option<Access>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Saturation fixed point per sweep point: τ, p_c, throughput, service time.
    Solve(Common),
    /// Largest number of template flows passing the admission test.
    Capacity {
        #[command(flatten)]
        common: Common,
        /// Search with the simulator (loss rule) instead of the analysis.
        #[arg(long)]
        simulate: bool,
    },
    /// Run the simulator and report per-class metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Template flow counts to add (needs a capacity template).
        #[arg(long, value_delimiter = ',')]
        flows: Vec<u32>,
        /// Simulated seconds; overrides the scenario.
        #[arg(long)]
        duration: Option<f64>,
        /// Also write a per-packet trace for each run.
        #[arg(long)]
        trace: bool,
    },
    /// Saturation analysis next to simulation, with relative deltas.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Relative throughput delta reported as a mismatch.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Simulated seconds; overrides the scenario.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Replay an ADDTS/DELTS event stream through the admission controller.
    Admit {
        #[command(flatten)]
        common: Common,
        /// Event file: `[time] ADDTS tsid up dir station rate_bps bytes` or `[time] DELTS tsid`.
        #[arg(long)]
        events: PathBuf,
        /// Admitted set to start from.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Where to save the admitted set after the replay.
        #[arg(long)]
        save_snapshot: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve(c) => c,
            Command::Capacity { common, .. }
            | Command::Simulate { common, .. }
            | Command::Compare { common, .. }
            | Command::Admit { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Capacity { .. } => "capacity",
            Command::Simulate { .. } => "simulate",
            Command::Compare { .. } => "compare",
            Command::Admit { .. } => "admit",
        }
    }
}

/// Written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub scenario: PathBuf,
    pub access: AccessMode,
    pub rho_threshold: f64,
    pub solver: crate::scenario::SolverConfig,
    pub simulation: Option<SimOptions>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub version: &'static str,
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().collect();
    match execute(&cli.command, &args) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(common: &Common) -> Result<Scenario> {
    let mut s = Scenario::load(&common.scenario).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", common.scenario.display()))),
        other => other,
    })?;
    if let Some(seeds) = &common.seeds {
        s.simulation.seeds = seeds.clone();
    }
    if let Some(th) = common.rho_th {
        s.admission.rho_threshold = th;
    }
    if let Some(a) = common.access {
        s.access = match a {
            Access::Basic => AccessMode::Basic,
            Access::Rts => AccessMode::RtsCts,
        };
    }
    s.validate()?;
    Ok(s)
}

type Point = Vec<(String, Vec<f64>)>;

/// Every sweep point with its resolved scenario.
fn expand(base: &Scenario) -> Result<Vec<(Point, Scenario)>> {
    base.sweep
        .points()
        .into_iter()
        .map(|p| {
            let s = base.at_sweep_point(&p)?;
            Ok((p, s))
        })
        .collect()
}

fn point_headers(base: &Scenario) -> Vec<String> {
    base.sweep.axes.iter().map(|a| a.name.clone()).collect()
}

fn point_cells(point: &Point) -> Vec<String> {
    point
        .iter()
        .map(|(_, v)| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/"))
        .collect()
}

#[cfg(feature = "parallel")]
fn map_points<T: Send, F: Fn(&(Point, Scenario)) -> Result<T> + Sync + Send>(points: &[(Point, Scenario)], f: F) -> Result<Vec<T>> {
    points.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_points<T, F: Fn(&(Point, Scenario)) -> Result<T>>(points: &[(Point, Scenario)], f: F) -> Result<Vec<T>> {
    points.iter().map(f).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(crate::admission::csv_error)?;
    for row in rows {
        w.write_record(row).map_err(crate::admission::csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn sim_options(s: &Scenario, duration: Option<f64>, trace: bool) -> SimOptions {
    let mut o = SimOptions::from(&s.simulation);
    if let Some(d) = duration {
        o.duration_s = d;
        o.warmup_s = o.warmup_s.min(d / 10.0);
    }
    o.trace_packets = trace;
    o
}

/// Run one command; returns the human summary.
pub fn execute(command: &Command, args: &[String]) -> Result<String> {
    let common = command.common();
    let base = load(common)?;
    fs::create_dir_all(&common.out)?;
    let mut outputs = Vec::new();
    let mut sim = None;
    let summary = match command {
        Command::Solve(_) => solve(&base, &common.out, &mut outputs)?,
        Command::Capacity { simulate, .. } => {
            if *simulate {
                sim = Some(sim_options(&base, None, false));
            }
            capacity(&base, &common.out, sim.as_ref(), &mut outputs)?
        }
        Command::Simulate {
            flows, duration, trace, ..
        } => {
            let o = sim_options(&base, *duration, *trace);
            let text = simulate(&base, &common.out, &o, flows, &mut outputs)?;
            sim = Some(o);
            text
        }
        Command::Compare {
            tolerance, duration, ..
        } => {
            let o = sim_options(&base, *duration, false);
            let text = compare(&base, &common.out, &o, *tolerance, &mut outputs)?;
            sim = Some(o);
            text
        }
        Command::Admit {
            events,
            snapshot,
            save_snapshot,
            ..
        } => admit(&base, &common.out, events, snapshot.as_deref(), save_snapshot.as_deref(), &mut outputs)?,
    };
    let manifest = RunManifest {
        command: command.name().into(),
        args: args.to_vec(),
        scenario: common.scenario.clone(),
        access: base.access,
        rho_threshold: base.admission.rho_threshold,
        solver: base.solver,
        simulation: sim,
        seeds: base.simulation.seeds.clone(),
        outputs,
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = common.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, text + "\n")?;
    Ok(summary)
}

fn solve(base: &Scenario, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<String> {
    let points = expand(base)?;
    let solved = map_points(&points, |(point, s)| {
        let table = s.traffic_classes()?;
        let times = exchange_times(&table, &s.phy, s.access);
        let sol = solve_fixed_point(&table, &times, &s.solver)?;
        let rows: Vec<Vec<String>> = (0..table.len())
            .map(|j| {
                let c = &table.classes[j];
                let mut row = point_cells(point);
                row.extend([
                    c.label(),
                    c.ac.to_string(),
                    c.stations.to_string(),
                    fmt(sol.tau[j]),
                    fmt(sol.p_c[j]),
                    fmt(sol.p_drop[j]),
                    fmt(sol.throughput[j]),
                    format!("{:.3}", sol.service_time[j]),
                    format!("{:.3}", sol.cycle_time[j]),
                ]);
                row
            })
            .collect();
        Ok(rows)
    })?;
    let mut header = point_headers(base);
    header.extend(
        [
            "tc",
            "ac",
            "stations",
            "tau",
            "p_collision",
            "p_drop",
            "throughput_norm",
            "service_time_us",
            "cycle_time_us",
        ]
        .map(String::from),
    );
    let rows: Vec<Vec<String>> = solved.into_iter().flatten().collect();
    let path = out.join("solve.csv");
    write_rows(&path, &header, &rows)?;
    outputs.push(path.clone());
    Ok(format!("{} rows over {} sweep points -> {}\n", rows.len(), points.len(), path.display()))
}

fn capacity(base: &Scenario, out: &Path, sim: Option<&SimOptions>, outputs: &mut Vec<PathBuf>) -> Result<String> {
    let points = expand(base)?;
    let model = CapacityModel::for_scenario(base);
    let mut header = point_headers(base);
    let rows: Vec<Vec<String>> = match sim {
        None => {
            header.extend(["flows", "binding_tc", "max_rho_at_next"].map(String::from));
            map_points(&points, |(point, s)| {
                let est = analysis_capacity(s, &model, s.admission.rho_threshold)?;
                let next = est.probes.last();
                let label = match next {
                    Some(p) => s.with_flows(p.flows)?.traffic_classes()?.classes[p.binding_class].label(),
                    None => String::new(),
                };
                let mut row = point_cells(point);
                row.extend([est.flows.to_string(), label, next.map_or(String::new(), |p| fmt(p.max_rho))]);
                Ok(row)
            })?
        }
        Some(o) => {
            header.extend(["flows", "max_loss_at_next"].map(String::from));
            map_points(&points, |(point, s)| {
                // The analysis estimate is a cheap starting point for the search.
                let hint = analysis_capacity(s, &model, 1.0)?.flows.max(1);
                let found = capacity_search(s, o, &s.simulation.seeds, s.simulation.loss_threshold, hint)?;
                let next = found.probes.iter().find(|p| p.flows == found.flows + 1);
                let mut row = point_cells(point);
                row.extend([
                    found.flows.to_string(),
                    next.map_or(String::new(), |p| {
                        let mut l = p.max_loss.clone();
                        l.sort_by(f64::total_cmp);
                        fmt(l[l.len() / 2])
                    }),
                ]);
                Ok(row)
            })?
        }
    };
    let path = out.join("capacity.csv");
    write_rows(&path, &header, &rows)?;
    outputs.push(path.clone());
    let axes = header.len() - if sim.is_some() { 2 } else { 3 };
    let mut text = String::new();
    for row in &rows {
        text += &format!("{} -> {} flows\n", row[..axes].join(" "), row[axes]);
    }
    Ok(text)
}

fn simulate(base: &Scenario, out: &Path, opts: &SimOptions, flows: &[u32], outputs: &mut Vec<PathBuf>) -> Result<String> {
    let mut points = expand(base)?;
    let mut header = point_headers(base);
    if !flows.is_empty() {
        header.push("flows".into());
        let mut expanded = Vec::new();
        for (p, s) in points {
            for &n in flows {
                let mut q = p.clone();
                q.push(("flows".into(), vec![n as f64]));
                expanded.push((q, s.with_flows(n)?));
            }
        }
        points = expanded;
    }
    let runs: Vec<Vec<SimMetrics>> = map_points(&points, |(_, s)| run_seeds(s, opts, &s.simulation.seeds))?;
    header.extend(
        [
            "seed",
            "tc",
            "ac",
            "offered_pkts",
            "delivered_pkts",
            "late_pkts",
            "retry_drops_pkts",
            "buffer_drops_pkts",
            "loss_ratio",
            "throughput_norm",
            "service_time_us",
            "access_delay_us",
            "wireless_delay_ms",
            "attempts",
            "collisions",
        ]
        .map(String::from),
    );
    let mut rows = Vec::new();
    for ((point, _), metrics) in points.iter().zip(&runs) {
        for m in metrics {
            for c in &m.classes {
                let mut row = point_cells(point);
                row.extend([
                    m.seed.to_string(),
                    c.label.clone(),
                    c.ac.to_string(),
                    c.offered.to_string(),
                    c.delivered.to_string(),
                    c.late.to_string(),
                    c.retry_drops.to_string(),
                    c.buffer_drops.to_string(),
                    fmt(c.loss_ratio()),
                    fmt(c.throughput),
                    format!("{:.3}", c.mean_service_time_us),
                    format!("{:.3}", c.mean_access_delay_us),
                    format!("{:.4}", c.mean_delay_us / 1000.0),
                    c.attempts.to_string(),
                    (c.external_collisions + c.internal_collisions).to_string(),
                ]);
                rows.push(row);
            }
            if opts.trace_packets {
                let name = format!("trace_{}_seed{}.csv", point_cells(point).join("_").replace('/', "-"), m.seed);
                let path = out.join(name.replace("trace__", "trace_"));
                simulator::write_trace(&m.trace, BufWriter::new(File::create(&path)?))?;
                outputs.push(path);
            }
        }
    }
    let path = out.join("simulate.csv");
    write_rows(&path, &header, &rows)?;
    outputs.push(path.clone());
    Ok(format!("{} rows over {} points -> {}\n", rows.len(), points.len(), path.display()))
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a) / a.abs().max(f64::MIN_POSITIVE)
    }
}

fn compare(base: &Scenario, out: &Path, opts: &SimOptions, tolerance: f64, outputs: &mut Vec<PathBuf>) -> Result<String> {
    let points = expand(base)?;
    let results = map_points(&points, |(point, s)| {
        let table = s.traffic_classes()?;
        if table.classes.iter().any(|c| !c.is_saturated()) {
            return Err(Error::config("stations", "compare needs an all-saturated scenario"));
        }
        let times = exchange_times(&table, &s.phy, s.access);
        let sol = solve_fixed_point(&table, &times, &s.solver)?;
        let runs = run_seeds(s, opts, &s.simulation.seeds)?;
        let n = runs.len() as f64;
        let mut rows = Vec::new();
        let mut worst: f64 = 0.0;
        for j in 0..table.len() {
            let tp = runs.iter().map(|r| r.classes[j].throughput).sum::<f64>() / n;
            let st = runs.iter().map(|r| r.classes[j].mean_service_time_us).sum::<f64>() / n;
            let dt = relative(sol.throughput[j], tp);
            let ds = relative(sol.service_time[j], st);
            worst = worst.max(dt.abs());
            let mut row = point_cells(point);
            row.extend([
                table.classes[j].label(),
                fmt(sol.throughput[j]),
                fmt(tp),
                fmt(dt),
                format!("{:.3}", sol.service_time[j]),
                format!("{:.3}", st),
                fmt(ds),
            ]);
            rows.push(row);
        }
        Ok((rows, worst))
    })?;
    let mut header = point_headers(base);
    header.extend(
        [
            "tc",
            "throughput_analysis_norm",
            "throughput_sim_norm",
            "throughput_delta_rel",
            "service_time_analysis_us",
            "service_time_sim_us",
            "service_time_delta_rel",
        ]
        .map(String::from),
    );
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let rows: Vec<Vec<String>> = results.into_iter().flat_map(|r| r.0).collect();
    let path = out.join("compare.csv");
    write_rows(&path, &header, &rows)?;
    outputs.push(path.clone());
    let verdict = if worst <= tolerance { "within" } else { "OUTSIDE" };
    Ok(format!(
        "max relative throughput delta {:.4} ({verdict} tolerance {tolerance}) -> {}\n",
        worst,
        path.display()
    ))
}

fn admit(
    base: &Scenario,
    out: &Path,
    events: &Path,
    snapshot: Option<&Path>,
    save: Option<&Path>,
    outputs: &mut Vec<PathBuf>,
) -> Result<String> {
    let text = fs::read_to_string(events)
        .map_err(|io| Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", events.display()))))?;
    let events = parse_events(&text)?;
    let mut controller = AdmissionController::new(base.clone()).with_threshold(base.admission.rho_threshold)?;
    if let Some(p) = snapshot {
        controller.restore(Snapshot::load(p)?)?;
    }
    let decisions = controller.replay(events);
    let path = out.join("decisions.csv");
    write_decision_log(&decisions, BufWriter::new(File::create(&path)?))?;
    outputs.push(path.clone());
    if let Some(p) = save {
        controller.snapshot().save(p)?;
        outputs.push(p.to_path_buf());
    }
    let admitted = decisions.iter().filter(|d| d.admitted()).count();
    Ok(format!(
        "{} events, {admitted} accepted, {} streams admitted at the end -> {}\n",
        decisions.len(),
        controller.admitted().len(),
        path.display()
    ))
}
