//! Utilization of nonsaturated traffic classes.
//!
//! A user of class `j` sees a random set of other active users. Active
//! counts are modelled as independent binomials with the per-user
//! utilization `ρ` as success probability, and the service rate `μ_j` is
//! the reciprocal of the saturation service time averaged over that
//! distribution. `ρ_j = λ_j / μ_j` closes the loop. Saturated classes are
//! always fully active.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Error, Result};
use crate::saturation;
use crate::scenario::{AccessMode, PhyParams, Scenario, SolverConfig, TrafficClassTable};

/// `Pr(f' | class j active)` for the active-count vector `f'`, with the
/// conditioning class contributing `f'_j − 1` out of `f_j − 1` other users.
pub fn activity_weight(j: usize, active: &[u32], rho: &[f64], table: &TrafficClassTable) -> Result<f64> {
    if active.len() != table.len() || rho.len() != table.len() {
        return Err(Error::domain("vector lengths differ from the class count"));
    }
    let mut weight = 1.0;
    for (k, class) in table.classes.iter().enumerate() {
        let (trials, successes) = if k == j {
            if active[k] == 0 {
                return Err(Error::domain(format!("conditioning class {j} must have an active user")));
            }
            (class.stations - 1, active[k] - 1)
        } else {
            (class.stations, active[k])
        };
        if successes > trials {
            return Err(Error::domain(format!(
                "class {k}: {} active users out of {}",
                active[k], class.stations
            )));
        }
        weight *= binomial(trials, rho[k]).pmf(successes as u64);
    }
    Ok(weight)
}

fn binomial(trials: u32, p: f64) -> Binomial {
    Binomial::new(p.clamp(0.0, 1.0), trials as u64).expect("probability clamped into [0, 1]")
}

/// A truncated binomial marginal: the smallest mode-centred run of values
/// holding at least `1 − epsilon` of the mass.
fn truncated_marginal(trials: u32, p: f64, shift: u32, epsilon: f64) -> (Vec<(u32, f64)>, f64) {
    let dist = binomial(trials, p);
    let pmf: Vec<f64> = (0..=trials as u64).map(|k| dist.pmf(k)).collect();
    let mode = (0..pmf.len()).max_by(|&a, &b| pmf[a].total_cmp(&pmf[b])).unwrap();
    let (mut lo, mut hi) = (mode, mode);
    let mut mass = pmf[mode];
    while mass < 1.0 - epsilon && (lo > 0 || hi + 1 < pmf.len()) {
        let left = if lo > 0 { pmf[lo - 1] } else { -1.0 };
        let right = if hi + 1 < pmf.len() { pmf[hi + 1] } else { -1.0 };
        if left >= right {
            lo -= 1;
            mass += left;
        } else {
            hi += 1;
            mass += right;
        }
    }
    ((lo..=hi).map(|k| (k as u32 + shift, pmf[k])).collect(), mass)
}

/// Active-count lattice seen by a user of class `j`, with renormalized
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub points: Vec<(Vec<u32>, f64)>,
    /// Probability mass dropped by the truncation.
    pub discarded: f64,
}

pub fn activity_lattice(j: usize, rho: &[f64], table: &TrafficClassTable, epsilon: f64) -> Lattice {
    let free: Vec<usize> = (0..table.len())
        .filter(|&k| !table.classes[k].is_saturated() || k == j)
        .collect();
    let share = epsilon / free.len().max(1) as f64;
    let mut marginals: Vec<Vec<(u32, f64)>> = Vec::with_capacity(table.len());
    let mut kept = 1.0;
    for (k, class) in table.classes.iter().enumerate() {
        if class.is_saturated() && k != j {
            marginals.push(vec![(class.stations, 1.0)]);
        } else if k == j {
            let p = if class.is_saturated() { 1.0 } else { rho[k] };
            let (m, mass) = truncated_marginal(class.stations - 1, p, 1, share);
            kept *= mass;
            marginals.push(m);
        } else {
            let (m, mass) = truncated_marginal(class.stations, rho[k], 0, share);
            kept *= mass;
            marginals.push(m);
        }
    }
    let mut points = vec![(Vec::with_capacity(table.len()), 1.0)];
    for marginal in &marginals {
        let mut next = Vec::with_capacity(points.len() * marginal.len());
        for (counts, w) in &points {
            for &(value, p) in marginal {
                let mut c: Vec<u32> = counts.clone();
                c.push(value);
                next.push((c, w * p));
            }
        }
        points = next;
    }
    let total: f64 = points.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut points {
        *w /= total;
    }
    Lattice {
        points,
        discarded: 1.0 - kept,
    }
}

type CacheKey = Vec<[u32; 9]>;

/// Description of a reduced table that determines its service times.
fn cache_key(reduced: &TrafficClassTable) -> CacheKey {
    reduced
        .classes
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let ac = reduced.ac_params(j);
            [
                c.ac as u32,
                ac.aifsn,
                ac.cw_min,
                ac.cw_max,
                ac.max_doublings,
                ac.retry_limit,
                c.group as u32,
                c.traffic.msdu_bytes(),
                c.stations,
            ]
        })
        .collect()
}

/// Per-class utilization at the fixed point. Vectors are indexed like the
/// class table.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySolution {
    /// `λ_j`, packets per second per user.
    pub lambda: Vec<f64>,
    /// `μ_j`, packets per second.
    pub mu: Vec<f64>,
    /// `ρ_j = λ_j / μ_j`; above 1 means overload.
    pub rho: Vec<f64>,
    pub saturated: Vec<bool>,
    /// Expected number of active users per class.
    pub mean_active: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Largest truncated mass over the final lattices.
    pub discarded_mass: f64,
}

impl CapacitySolution {
    /// Largest `ρ` among nonsaturated classes with the class index.
    pub fn max_rho(&self) -> Option<(usize, f64)> {
        self.rho
            .iter()
            .enumerate()
            .filter(|(j, _)| !self.saturated[*j])
            .map(|(j, &r)| (j, r))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Utilization solver with a memo of saturation service times.
///
/// The memo is keyed by the reduced class table, so it is shared across
/// lattice points, flow counts and admission probes as long as the PHY
/// parameters and access mode stay fixed.
#[derive(Debug)]
pub struct CapacityModel {
    pub phy: PhyParams,
    pub access: AccessMode,
    pub solver: SolverConfig,
    pub epsilon: f64,
    memoize: bool,
    cache: Mutex<HashMap<CacheKey, Arc<Vec<f64>>>>,
}

impl CapacityModel {
    pub fn new(phy: PhyParams, access: AccessMode, solver: SolverConfig, epsilon: f64) -> Self {
        CapacityModel {
            phy,
            access,
            solver,
            epsilon,
            memoize: true,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self::new(
            scenario.phy,
            scenario.access,
            scenario.solver,
            scenario.admission.weight_truncation_epsilon,
        )
    }

    pub fn without_memo(mut self) -> Self {
        self.memoize = false;
        self
    }

    pub fn cached_points(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn compute(&self, reduced: &TrafficClassTable) -> Result<Vec<f64>> {
        let counts = reduced.counts();
        let times = saturation::service_time(reduced, &self.phy, self.access, &counts, &self.solver).map_err(|e| match e {
            Error::NonConvergence {
                what,
                iterations,
                residual,
            } => Error::NonConvergence {
                what: format!("{what} at active counts {:?}", cache_key(reduced).iter().map(|k| k[8]).collect::<Vec<_>>()),
                iterations,
                residual,
            },
            other => other,
        })?;
        Ok(times.into_iter().map(|t| t.expect("every reduced class is active")).collect())
    }

    /// Mean service time of every class when `counts` users are active.
    pub fn service_times(&self, table: &TrafficClassTable, counts: &[u32]) -> Result<Vec<Option<f64>>> {
        let (reduced, kept) = table.restrict(counts);
        if reduced.is_empty() {
            return Err(Error::domain("at least one station must be active"));
        }
        let values = self.lookup(&reduced)?;
        let mut out = vec![None; table.len()];
        for (r, &j) in kept.iter().enumerate() {
            out[j] = Some(values[r]);
        }
        Ok(out)
    }

    fn lookup(&self, reduced: &TrafficClassTable) -> Result<Arc<Vec<f64>>> {
        let key = cache_key(reduced);
        if self.memoize {
            if let Some(hit) = self.cache.lock().unwrap().get(&key) {
                return Ok(hit.clone());
            }
        }
        let value = Arc::new(self.compute(reduced)?);
        if self.memoize {
            self.cache.lock().unwrap().insert(key, value.clone());
        }
        Ok(value)
    }

    /// Solve every distinct lattice point that is not cached yet.
    fn prefetch(&self, table: &TrafficClassTable, lattices: &[Lattice]) -> Result<()> {
        if !self.memoize {
            return Ok(());
        }
        let mut missing: HashMap<CacheKey, TrafficClassTable> = HashMap::new();
        {
            let cache = self.cache.lock().unwrap();
            for lattice in lattices {
                for (counts, _) in &lattice.points {
                    let (reduced, _) = table.restrict(counts);
                    let key = cache_key(&reduced);
                    if !cache.contains_key(&key) {
                        missing.entry(key).or_insert(reduced);
                    }
                }
            }
        }
        let mut work: Vec<(CacheKey, TrafficClassTable)> = missing.into_iter().collect();
        work.sort_by(|a, b| a.0.cmp(&b.0));
        #[cfg(feature = "parallel")]
        let solved: Vec<(CacheKey, Result<Vec<f64>>)> =
            work.into_par_iter().map(|(key, reduced)| (key, self.compute(&reduced))).collect();
        #[cfg(not(feature = "parallel"))]
        let solved: Vec<(CacheKey, Result<Vec<f64>>)> =
            work.into_iter().map(|(key, reduced)| (key, self.compute(&reduced))).collect();
        let mut cache = self.cache.lock().unwrap();
        for (key, value) in solved {
            cache.insert(key, Arc::new(value?));
        }
        Ok(())
    }

    fn average_service(&self, j: usize, table: &TrafficClassTable, lattice: &Lattice) -> Result<f64> {
        let mut mean = 0.0;
        for (counts, w) in &lattice.points {
            let t = self.service_times(table, counts)?[j].expect("conditioning class is active");
            mean += w * t;
        }
        Ok(mean)
    }

    /// `μ_j` in packets per second given the utilization vector.
    pub fn mean_service_rate(&self, j: usize, rho: &[f64], table: &TrafficClassTable) -> Result<f64> {
        let lattice = activity_lattice(j, rho, table, self.epsilon);
        self.prefetch(table, std::slice::from_ref(&lattice))?;
        Ok(1e6 / self.average_service(j, table, &lattice)?)
    }

    fn rates(&self, rho: &[f64], table: &TrafficClassTable) -> Result<(Vec<f64>, f64)> {
        let lattices: Vec<Lattice> = (0..table.len())
            .map(|j| activity_lattice(j, rho, table, self.epsilon))
            .collect();
        self.prefetch(table, &lattices)?;
        let mut mu = Vec::with_capacity(table.len());
        for (j, lattice) in lattices.iter().enumerate() {
            mu.push(1e6 / self.average_service(j, table, lattice)?);
        }
        let discarded = lattices.iter().map(|l| l.discarded).fold(0.0, f64::max);
        Ok((mu, discarded))
    }

    /// Utilization fixed point from an empty system.
    pub fn solve_utilization(&self, table: &TrafficClassTable) -> Result<CapacitySolution> {
        self.solve_utilization_from(table, &vec![0.0; table.len()])
    }

    /// Utilization fixed point from a given starting vector.
    pub fn solve_utilization_from(&self, table: &TrafficClassTable, start: &[f64]) -> Result<CapacitySolution> {
        match self.iterate(table, start, None)? {
            Utilization::Converged(solution) => Ok(solution),
            Utilization::Exceeded { .. } => unreachable!("no threshold given"),
        }
    }

    /// Decide whether every nonsaturated class stays within `threshold`.
    ///
    /// The utilization map is increasing (more active users never speed up
    /// service), so iterates started from an empty system stay below the
    /// least fixed point. As soon as one of them maps above the threshold
    /// the fixed point does too and the iteration stops early.
    pub fn check_threshold(&self, table: &TrafficClassTable, threshold: f64) -> Result<Utilization> {
        self.iterate(table, &vec![0.0; table.len()], Some(threshold))
    }

    fn iterate(&self, table: &TrafficClassTable, start: &[f64], threshold: Option<f64>) -> Result<Utilization> {
        if table.is_empty() {
            return Err(Error::domain("no traffic classes"));
        }
        let saturated: Vec<bool> = table.classes.iter().map(|c| c.is_saturated()).collect();
        let lambda: Vec<f64> = table.classes.iter().map(|c| c.arrival_rate()).collect();
        for (j, class) in table.classes.iter().enumerate() {
            if !saturated[j] && !(lambda[j] > 0.0) {
                return Err(Error::domain(format!("class {j} (AC{}) has no offered load", class.ac)));
            }
        }
        let mut rho: Vec<f64> = (0..table.len())
            .map(|j| if saturated[j] { 1.0 } else { start[j] })
            .collect();
        let eta = self.solver.rho_damping;
        let mut iterations = 0;
        loop {
            let (mu, discarded) = self.rates(&rho, table)?;
            let target: Vec<f64> = (0..table.len())
                .map(|j| if saturated[j] { 1.0 } else { lambda[j] / mu[j] })
                .collect();
            if let Some(th) = threshold {
                let worst = (0..table.len())
                    .filter(|&j| !saturated[j])
                    .max_by(|&a, &b| target[a].total_cmp(&target[b]));
                if let Some(j) = worst {
                    if target[j] > th {
                        return Ok(Utilization::Exceeded {
                            class: j,
                            rho: target,
                            iterations,
                        });
                    }
                }
            }
            let residual = (0..table.len())
                .map(|j| (target[j] - rho[j]).abs())
                .fold(0.0, f64::max);
            if residual < self.solver.rho_tolerance {
                let lambda: Vec<f64> = (0..table.len())
                    .map(|j| if saturated[j] { mu[j] } else { lambda[j] })
                    .collect();
                let mean_active = table
                    .classes
                    .iter()
                    .zip(&target)
                    .map(|(c, r)| c.stations as f64 * r.clamp(0.0, 1.0))
                    .collect();
                return Ok(Utilization::Converged(CapacitySolution {
                    lambda,
                    mu,
                    rho: target,
                    saturated,
                    mean_active,
                    iterations,
                    residual,
                    discarded_mass: discarded,
                }));
            }
            if iterations >= self.solver.rho_max_iterations {
                return Err(Error::NonConvergence {
                    what: "utilization fixed point".into(),
                    iterations,
                    residual,
                });
            }
            for j in 0..table.len() {
                rho[j] = (1.0 - eta) * rho[j] + eta * target[j];
            }
            iterations += 1;
        }
    }
}

/// Outcome of a threshold check.
#[derive(Debug, Clone, PartialEq)]
pub enum Utilization {
    /// The fixed point was reached and may or may not pass the threshold.
    Converged(CapacitySolution),
    /// Class `class` is certain to exceed the threshold; `rho` is a
    /// componentwise lower bound on the fixed point.
    Exceeded { class: usize, rho: Vec<f64>, iterations: usize },
}

impl Utilization {
    /// Binding nonsaturated class and its utilization (a lower bound when
    /// the check stopped early).
    pub fn max_rho(&self) -> Option<(usize, f64)> {
        match self {
            Utilization::Converged(s) => s.max_rho(),
            Utilization::Exceeded { class, rho, .. } => Some((*class, rho[*class])),
        }
    }

    pub fn passes(&self, threshold: f64) -> bool {
        match self {
            Utilization::Converged(s) => s.max_rho().map_or(true, |(_, r)| r <= threshold),
            Utilization::Exceeded { .. } => false,
        }
    }
}

/// `Pr(k users active in total | a user of class j is active)` for
/// `k = 0..=Σ f`, under the independent-binomial activity model.
pub fn activity_pdf(j: usize, rho: &[f64], table: &TrafficClassTable) -> Vec<f64> {
    let total: u32 = table.counts().iter().sum();
    let mut pdf = vec![0.0; total as usize + 1];
    pdf[1] = 1.0;
    for (k, class) in table.classes.iter().enumerate() {
        let (trials, p) = match (k == j, class.is_saturated()) {
            (true, true) => (class.stations - 1, 1.0),
            (true, false) => (class.stations - 1, rho[k]),
            (false, true) => (class.stations, 1.0),
            (false, false) => (class.stations, rho[k]),
        };
        let dist = binomial(trials, p);
        let marginal: Vec<f64> = (0..=trials as u64).map(|x| dist.pmf(x)).collect();
        let mut next = vec![0.0; pdf.len()];
        for (a, &pa) in pdf.iter().enumerate().filter(|(_, p)| **p > 0.0) {
            for (b, &pb) in marginal.iter().enumerate() {
                if a + b < next.len() {
                    next[a + b] += pa * pb;
                }
            }
        }
        pdf = next;
    }
    pdf
}

/// One probe of an analysis capacity search.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityProbe {
    pub flows: u32,
    /// Exact at or below the threshold, a lower bound above it.
    pub max_rho: f64,
    pub binding_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityEstimate {
    /// Largest flow count passing the threshold (0 if even one flow fails).
    pub flows: u32,
    /// Probes in evaluation order.
    pub probes: Vec<CapacityProbe>,
}

/// Largest number of template flows for which every nonsaturated class
/// keeps `ρ ≤ rho_threshold`, found by adding one flow at a time until the
/// first failure. Utilization is not monotone in the flow count deep in
/// overload, so the scan never skips ahead.
pub fn analysis_capacity(base: &Scenario, model: &CapacityModel, rho_threshold: f64) -> Result<CapacityEstimate> {
    let cap = base
        .capacity
        .as_ref()
        .ok_or_else(|| Error::config("capacity", "scenario has no capacity template"))?;
    let mut probes = Vec::new();
    let mut flows = 0;
    for n in 1..=cap.max_flows {
        let scenario = base.with_flows(n)?;
        let table = scenario.traffic_classes()?;
        let check = model.check_threshold(&table, rho_threshold)?;
        let (binding_class, max_rho) = check
            .max_rho()
            .ok_or_else(|| Error::domain("scenario has no nonsaturated class"))?;
        probes.push(CapacityProbe {
            flows: n,
            max_rho,
            binding_class,
        });
        if !check.passes(rho_threshold) {
            break;
        }
        flows = n;
    }
    Ok(CapacityEstimate { flows, probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{derive_traffic_classes, AcTable, StationSpec, TrafficDescriptor};
    use approx::assert_relative_eq;

    fn voice_table(uplink: u32, flows: u32) -> TrafficClassTable {
        let voice = TrafficDescriptor::cbr(3, 80, 10.0);
        let mut down = voice.clone();
        down.flows = flows;
        let stations = vec![
            StationSpec::new("phones", uplink, vec![voice]),
            StationSpec::access_point(vec![down]),
        ];
        derive_traffic_classes(&stations, &AcTable::default()).unwrap()
    }

    fn model() -> CapacityModel {
        CapacityModel::new(PhyParams::default(), AccessMode::Basic, SolverConfig::default(), 1e-6)
    }

    #[test]
    fn weight_limits() {
        let t = voice_table(3, 3);
        assert_eq!(activity_weight(0, &[3, 1], &[1.0, 1.0], &t).unwrap(), 1.0);
        assert_eq!(activity_weight(0, &[2, 1], &[1.0, 1.0], &t).unwrap(), 0.0);
        assert_eq!(activity_weight(0, &[1, 0], &[0.0, 0.0], &t).unwrap(), 1.0);
        assert_eq!(activity_weight(0, &[2, 0], &[0.0, 0.0], &t).unwrap(), 0.0);
        assert!(activity_weight(0, &[0, 1], &[0.5, 0.5], &t).is_err());
        assert!(activity_weight(0, &[4, 1], &[0.5, 0.5], &t).is_err());
    }

    #[test]
    fn weights_sum_to_one_over_the_lattice() {
        let t = voice_table(4, 4);
        let rho = [0.3, 0.7];
        let mut total = 0.0;
        for a in 1..=4 {
            for b in 0..=1 {
                total += activity_weight(0, &[a, b], &rho, &t).unwrap();
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn truncated_lattice_is_normalized() {
        let t = voice_table(60, 60);
        let lattice = activity_lattice(0, &[0.25, 0.6], &t, 1e-6);
        let total: f64 = lattice.points.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lattice.discarded < 1e-6);
        assert!(lattice.points.len() < 60 * 2);
    }

    #[test]
    fn lone_user_is_served_at_the_empty_system_rate() {
        let stations = vec![StationSpec::new("s", 1, vec![TrafficDescriptor::cbr(3, 80, 20.0)])];
        let t = derive_traffic_classes(&stations, &AcTable::default()).unwrap();
        let m = model();
        let times = crate::timing::exchange_times(&t, &m.phy, m.access);
        assert_relative_eq!(m.mean_service_rate(0, &[0.4], &t).unwrap(), 1e6 / times.success[0], epsilon = 1e-9);
    }

    #[test]
    fn memo_is_transparent() {
        let t = voice_table(6, 6);
        let a = model().solve_utilization(&t).unwrap();
        let b = model().without_memo().solve_utilization(&t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn activity_pdf_limits() {
        let t = voice_table(5, 5);
        let pdf = activity_pdf(0, &[1.0, 1.0], &t);
        assert_eq!(pdf[6], 1.0);
        let pdf = activity_pdf(0, &[0.0, 0.0], &t);
        assert_eq!(pdf[1], 1.0);
        let pdf = activity_pdf(1, &[0.3, 0.5], &t);
        assert_relative_eq!(pdf.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(pdf[0], 0.0);
    }
}
