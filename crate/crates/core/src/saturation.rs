//! Saturation cycle-time model of EDCA.
//!
//! Every class transmits in a generic post-AIFS backoff slot with constant
//! probability `τ_j`. AIFS differences split the idle period into
//! contention zones, and a slot-occupancy chain weights the zone-specific
//! collision probabilities into one average `p_c` per class. The backoff
//! mean-value relation closes the fixed point. From `(τ, p_c)` the cycle of
//! a tagged user (the time between two of its successful transmissions) is
//! assembled from success, collision and idle components, giving
//! throughput and mean service time.
//!
//! Slots are numbered from 1 after the shortest AIFS; class `j` may
//! transmit in slot `n` iff `d_j ≤ n − 1`.

use crate::error::{Error, Result};
use crate::scenario::{AcParams, AccessMode, PhyParams, SolverConfig, TrafficClassTable};
use crate::timing::{exchange_times, ExchangeTimes};

/// Eligible classes for each post-AIFS backoff slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneStructure {
    /// Number of slots tracked, `W_min = min_j CW_{F(j),max}`.
    pub w_min: usize,
    /// `eligible[n - 1]` lists the classes that may transmit in slot `n`.
    pub eligible: Vec<Vec<usize>>,
    /// Zone label `x(n)`: the highest AC index among the classes with the
    /// largest AIFS offset still eligible in slot `n`.
    pub labels: Vec<usize>,
}

impl ZoneStructure {
    pub fn new(table: &TrafficClassTable) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Zones("no traffic classes".into()));
        }
        let w_min = (0..table.len()).map(|j| table.ac_params(j).cw_max).min().unwrap() as usize;
        let max_offset = table.classes.iter().map(|c| c.aifs_offset).max().unwrap() as usize;
        if w_min <= max_offset {
            return Err(Error::Zones(format!(
                "W_min = {w_min} slots does not exceed the largest AIFS offset {max_offset}; \
                 the class with the longest AIFS could never transmit"
            )));
        }
        let mut eligible = Vec::with_capacity(w_min);
        let mut labels = Vec::with_capacity(w_min);
        for n in 1..=w_min {
            let set: Vec<usize> = (0..table.len())
                .filter(|&j| table.classes[j].aifs_offset as usize <= n - 1)
                .collect();
            let widest = set.iter().map(|&j| table.classes[j].aifs_offset).max().unwrap();
            let label = set
                .iter()
                .filter(|&&j| table.classes[j].aifs_offset == widest)
                .map(|&j| table.classes[j].ac)
                .max()
                .unwrap();
            eligible.push(set);
            labels.push(label);
        }
        Ok(ZoneStructure { w_min, eligible, labels })
    }

    /// Eligible classes of slot `n` (1-based).
    pub fn slot(&self, n: usize) -> &[usize] {
        &self.eligible[n - 1]
    }

    /// Distinct zones as `(first slot, label, eligible classes)`.
    pub fn zones(&self) -> Vec<(usize, usize, &[usize])> {
        let mut zones: Vec<(usize, usize, &[usize])> = Vec::new();
        for n in 1..=self.w_min {
            let set = self.slot(n);
            if zones.last().map_or(true, |(_, _, prev)| *prev != set) {
                zones.push((n, self.labels[n - 1], set));
            }
        }
        zones
    }
}

/// Probability that none of the eligible users transmits.
fn idle_prob(eligible: &[usize], tau: &[f64], table: &TrafficClassTable) -> f64 {
    eligible
        .iter()
        .map(|&k| (1.0 - tau[k]).powi(table.classes[k].stations as i32))
        .product()
}

/// Attempt-free probability of `j`'s own queue and of its co-located
/// lower-priority siblings that are eligible in the zone. A station's
/// internal collision is won by its highest AC, so those attempts never
/// harm `j`.
fn sibling_factor(j: usize, eligible: &[usize], tau: &[f64], table: &TrafficClassTable) -> f64 {
    let ac = table.classes[j].ac;
    table
        .siblings(j)
        .filter(|k| eligible.contains(k) && table.classes[*k].ac <= ac)
        .map(|k| 1.0 - tau[k])
        .product()
}

/// `p^tr_x`: at least one eligible user transmits in a slot of the zone.
pub fn zone_transmission_prob(eligible: &[usize], tau: &[f64], table: &TrafficClassTable) -> f64 {
    1.0 - idle_prob(eligible, tau, table)
}

/// `p_{c_{j,x}}`: class `j` attempts in the zone and suffers an external or
/// internal collision.
pub fn zone_collision_prob(j: usize, eligible: &[usize], tau: &[f64], table: &TrafficClassTable) -> Result<f64> {
    if !eligible.contains(&j) {
        return Err(Error::domain(format!("class {j} is not eligible in this zone")));
    }
    let p = 1.0 - idle_prob(eligible, tau, table) / sibling_factor(j, eligible, tau, table);
    Ok(p.max(0.0))
}

/// `p_{s_{j,n}}`: some user of class `j` transmits successfully in a slot
/// with the given eligible set.
pub fn success_prob(j: usize, eligible: &[usize], tau: &[f64], table: &TrafficClassTable) -> f64 {
    if !eligible.contains(&j) {
        return 0.0;
    }
    let f = table.classes[j].stations as f64;
    f * tau[j] * idle_prob(eligible, tau, table) / sibling_factor(j, eligible, tau, table)
}

/// Long-run occupancy `b'_n` of the post-AIFS backoff slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOccupancy(pub Vec<f64>);

impl SlotOccupancy {
    /// `b'_n` for slot `n` (1-based).
    pub fn at(&self, n: usize) -> f64 {
        self.0[n - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Stationary distribution of the slot chain. Slot `n + 1` is reached only
/// if slot `n` stays idle; any transmission (or the last slot) returns the
/// chain to slot 1, so `b'_n ∝ Π_{k<n} (1 − p^tr_k)`.
pub fn slot_occupancy(p_tr: &[f64]) -> SlotOccupancy {
    let mut b = Vec::with_capacity(p_tr.len());
    let mut reach = 1.0;
    for &p in p_tr {
        b.push(reach);
        reach *= 1.0 - p;
    }
    let total: f64 = b.iter().sum();
    SlotOccupancy(b.into_iter().map(|x| x / total).collect())
}

/// Occupancy-weighted average of the per-slot collision probabilities over
/// the slots where a class with AIFS offset `aifs_offset` is eligible.
/// `per_slot[n - 1]` holds the collision probability in slot `n`.
pub fn average_collision_prob(aifs_offset: u32, occupancy: &SlotOccupancy, per_slot: &[f64]) -> Result<f64> {
    let first = aifs_offset as usize + 1;
    if first > occupancy.len() {
        return Err(Error::Zones(format!("AIFS offset {aifs_offset} leaves no eligible slot")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for n in first..=occupancy.len() {
        num += per_slot[n - 1] * occupancy.at(n);
        den += occupancy.at(n);
    }
    if den <= 0.0 {
        return Err(Error::Zones("eligible slots carry no occupancy".into()));
    }
    Ok(num / den)
}

/// Mean number of backoff slots drawn per transmission attempt given the
/// collision probability.
pub fn mean_backoff_slots(p_c: f64, ac: &AcParams) -> Result<f64> {
    if !(0.0..1.0).contains(&p_c) {
        return Err(Error::domain(format!("collision probability {p_c} outside [0, 1)")));
    }
    // Σ_k p^{k-1}(1-p) W_k/2 / (1 - p^r), written without the (1-p) factors
    // so it stays accurate as p approaches 1.
    let (mut num, mut den, mut weight) = (0.0, 0.0, 1.0);
    for k in 1..=ac.retry_limit {
        num += weight * ac.window(k) as f64 / 2.0;
        den += weight;
        weight *= p_c;
    }
    Ok(num / den)
}

/// Fixed-point result and cycle decomposition for one configuration of
/// active stations. All per-class vectors are indexed like the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationSolution {
    pub tau: Vec<f64>,
    pub p_c: Vec<f64>,
    pub p_drop: Vec<f64>,
    /// `E_j[t_bo]` in slots.
    pub backoff_slots: Vec<f64>,
    pub occupancy: SlotOccupancy,
    /// `γ_j`: a successful transmission belongs to a given user of class `j`.
    pub gamma: Vec<f64>,
    /// `ST[k][j]`: successes of class `k` during a class-`j` cycle.
    pub successes: Vec<Vec<f64>>,
    /// `CT[k][j]`: collisions of class `k` during a class-`j` cycle.
    pub collisions: Vec<Vec<f64>>,
    /// Mean number of users in a collision, `f_c`.
    pub collision_size: f64,
    pub success_time: Vec<f64>,
    pub collision_time: Vec<f64>,
    pub idle_time: Vec<f64>,
    /// `E_j[t_cyc]` in microseconds.
    pub cycle_time: Vec<f64>,
    /// Normalized throughput `S_j` of the whole class.
    pub throughput: Vec<f64>,
    /// `E_j[t_srv]` in microseconds.
    pub service_time: Vec<f64>,
    pub iterations: usize,
    /// `max_j |g(τ)_j − τ_j|` at the returned point.
    pub residual: f64,
}

struct Evaluation {
    tau_next: Vec<f64>,
    p_c: Vec<f64>,
    backoff: Vec<f64>,
    occupancy: SlotOccupancy,
}

fn evaluate(table: &TrafficClassTable, zones: &ZoneStructure, tau: &[f64]) -> Result<Evaluation> {
    let p_tr: Vec<f64> = zones
        .eligible
        .iter()
        .map(|set| zone_transmission_prob(set, tau, table))
        .collect();
    let occupancy = slot_occupancy(&p_tr);
    let mut p_c = Vec::with_capacity(table.len());
    let mut backoff = Vec::with_capacity(table.len());
    let mut tau_next = Vec::with_capacity(table.len());
    let mut per_slot = vec![0.0; zones.w_min];
    for j in 0..table.len() {
        let first = table.classes[j].aifs_offset as usize + 1;
        for n in first..=zones.w_min {
            per_slot[n - 1] = zone_collision_prob(j, zones.slot(n), tau, table)?;
        }
        // Hundreds of saturated contenders push p_c within rounding of 1.
        let pc = average_collision_prob(table.classes[j].aifs_offset, &occupancy, &per_slot)?.min(1.0 - f64::EPSILON);
        let bo = mean_backoff_slots(pc, table.ac_params(j))?;
        p_c.push(pc);
        backoff.push(bo);
        tau_next.push(1.0 / (bo + 1.0));
    }
    Ok(Evaluation {
        tau_next,
        p_c,
        backoff,
        occupancy,
    })
}

/// Initial guess: the collision-free transmission probability.
pub fn initial_tau(table: &TrafficClassTable) -> Vec<f64> {
    (0..table.len())
        .map(|j| 2.0 / (table.ac_params(j).cw_min as f64 + 2.0))
        .collect()
}

/// Solve the saturation fixed point and assemble the cycle decomposition.
pub fn solve_fixed_point(table: &TrafficClassTable, times: &ExchangeTimes, config: &SolverConfig) -> Result<SaturationSolution> {
    let zones = ZoneStructure::new(table)?;
    let mut tau = initial_tau(table);
    let mut damping = config.damping;
    let mut last_residual = f64::INFINITY;
    let mut iterations = 0;
    let eval = loop {
        let eval = evaluate(table, &zones, &tau)?;
        let residual = eval
            .tau_next
            .iter()
            .zip(&tau)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < config.tolerance {
            break eval;
        }
        if iterations >= config.max_iterations {
            return Err(Error::NonConvergence {
                what: "saturation fixed point".into(),
                iterations,
                residual,
            });
        }
        // Back off the step when the iteration starts to oscillate.
        if residual > last_residual {
            damping = (damping * 0.5).max(1e-3);
        }
        last_residual = residual;
        for (t, next) in tau.iter_mut().zip(&eval.tau_next) {
            *t = (1.0 - damping) * *t + damping * next;
        }
        iterations += 1;
    };
    let residual = eval
        .tau_next
        .iter()
        .zip(&tau)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(assemble(table, times, &zones, tau, eval, iterations, residual))
}

fn assemble(
    table: &TrafficClassTable,
    times: &ExchangeTimes,
    zones: &ZoneStructure,
    tau: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
    residual: f64,
) -> SaturationSolution {
    let classes = table.len();
    let slots = zones.w_min;
    let b = &eval.occupancy;
    let f: Vec<f64> = table.classes.iter().map(|c| c.stations as f64).collect();

    let p_s: Vec<Vec<f64>> = (0..classes)
        .map(|j| (1..=slots).map(|n| success_prob(j, zones.slot(n), &tau, table)).collect())
        .collect();
    let any_success: f64 = (1..=slots)
        .map(|n| b.at(n) * (0..classes).map(|l| p_s[l][n - 1]).sum::<f64>())
        .sum();
    let gamma: Vec<f64> = (0..classes)
        .map(|j| {
            let first = table.classes[j].aifs_offset as usize + 1;
            let own: f64 = (first..=slots).map(|n| b.at(n) * p_s[j][n - 1]).sum();
            own / f[j] / any_success
        })
        .collect();

    // ST[k][j] = f_k E[Q_j] γ_k / (1 − γ_j) with E[Q_j] = (1 − γ_j)/γ_j.
    let successes: Vec<Vec<f64>> = (0..classes)
        .map(|k| (0..classes).map(|j| if k == j { f[j] } else { f[k] * gamma[k] / gamma[j] }).collect())
        .collect();
    let collisions: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let odds = eval.p_c[k] / (1.0 - eval.p_c[k]);
            (0..classes).map(|j| odds * successes[k][j]).collect()
        })
        .collect();

    // f_c = Σ_n b'_n E[Y_n | Y_n ≥ 2], over the slots where a collision can
    // happen at all.
    let (mut weighted, mut mass) = (0.0, 0.0);
    for n in 1..=slots {
        let set = zones.slot(n);
        let none = idle_prob(set, &tau, table);
        let single: f64 = set.iter().map(|&j| p_s[j][n - 1]).sum();
        let den = 1.0 - none - single;
        if den > 1e-12 {
            let num: f64 = set.iter().map(|&j| f[j] * tau[j] - p_s[j][n - 1]).sum();
            weighted += b.at(n) * num / den;
            mass += b.at(n);
        }
    }
    let collision_size = if mass > 0.0 { weighted / mass } else { 0.0 };

    let mut success_time = Vec::with_capacity(classes);
    let mut collision_time = Vec::with_capacity(classes);
    let mut idle_time = Vec::with_capacity(classes);
    let mut cycle_time = Vec::with_capacity(classes);
    let mut throughput = Vec::with_capacity(classes);
    let mut service_time = Vec::with_capacity(classes);
    let mut p_drop = Vec::with_capacity(classes);
    for j in 0..classes {
        let suc: f64 = (0..classes).map(|k| successes[k][j] * times.success[k]).sum();
        let col = if collision_size > 0.0 {
            (0..classes).map(|k| collisions[k][j] * times.collision[k]).sum::<f64>() / collision_size
        } else {
            0.0
        };
        let idle = eval.backoff[j] * (collisions[j][j] / f[j] + 1.0) * times.slot;
        let cycle = suc + col + idle;
        let drop = eval.p_c[j].powi(table.ac_params(j).retry_limit as i32);
        success_time.push(suc);
        collision_time.push(col);
        idle_time.push(idle);
        cycle_time.push(cycle);
        throughput.push(f[j] * times.payload[j] / cycle);
        service_time.push((1.0 - drop) * cycle);
        p_drop.push(drop);
    }

    SaturationSolution {
        tau,
        p_c: eval.p_c,
        p_drop,
        backoff_slots: eval.backoff,
        occupancy: eval.occupancy,
        gamma,
        successes,
        collisions,
        collision_size,
        success_time,
        collision_time,
        idle_time,
        cycle_time,
        throughput,
        service_time,
        iterations,
        residual,
    }
}

/// Residual of the fixed-point equations at `tau`: `max_j |g(τ)_j − τ_j|`.
pub fn fixed_point_residual(table: &TrafficClassTable, tau: &[f64]) -> Result<f64> {
    let zones = ZoneStructure::new(table)?;
    let eval = evaluate(table, &zones, tau)?;
    Ok(eval
        .tau_next
        .iter()
        .zip(tau)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Mean service time of every class when `counts[j]` stations of class `j`
/// are active. Classes with a zero count get `None`. A lone active user is
/// served without contention in `T_s`.
pub fn service_time(
    table: &TrafficClassTable,
    phy: &PhyParams,
    access: AccessMode,
    counts: &[u32],
    config: &SolverConfig,
) -> Result<Vec<Option<f64>>> {
    if counts.len() != table.len() {
        return Err(Error::domain("count vector length differs from the class count"));
    }
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return Err(Error::domain("at least one station must be active"));
    }
    let (reduced, kept) = table.restrict(counts);
    let times = exchange_times(&reduced, phy, access);
    let mut out = vec![None; table.len()];
    if total == 1 {
        out[kept[0]] = Some(times.success[0]);
        return Ok(out);
    }
    let solution = solve_fixed_point(&reduced, &times, config)?;
    for (r, &j) in kept.iter().enumerate() {
        out[j] = Some(solution.service_time[r]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{derive_traffic_classes, AcTable, StationSpec, TrafficDescriptor};
    use approx::assert_relative_eq;

    fn acs() -> AcTable {
        AcTable::default()
    }

    fn table(groups: &[(u32, &[usize])]) -> TrafficClassTable {
        let stations: Vec<StationSpec> = groups
            .iter()
            .enumerate()
            .map(|(k, (count, acs))| {
                StationSpec::new(
                    format!("g{k}"),
                    *count,
                    acs.iter().map(|&ac| TrafficDescriptor::saturated(ac, 1000)).collect(),
                )
            })
            .collect();
        derive_traffic_classes(&stations, &acs()).unwrap()
    }

    #[test]
    fn lone_user_never_collides() {
        let t = table(&[(1, &[3])]);
        let p = zone_collision_prob(0, &[0], &[0.3], &t).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn homogeneous_class_reduces_to_dcf() {
        let t = table(&[(5, &[3])]);
        let tau = 0.17;
        let p = zone_collision_prob(0, &[0], &[tau], &t).unwrap();
        assert_relative_eq!(p, 1.0 - (1.0f64 - tau).powi(4), epsilon = 1e-15);
    }

    #[test]
    fn co_located_pair_collisions_by_enumeration() {
        // One station running AC1 (class 0) and AC3 (class 1). Enumerate the
        // four attempt outcomes: only a simultaneous attempt hurts, and it
        // only hurts the low-priority AC.
        let t = table(&[(1, &[1, 3])]);
        let tau = [0.2, 0.35];
        let eligible = [0, 1];
        let mut both = 0.0;
        for (a_low, a_high) in [(false, false), (false, true), (true, false), (true, true)] {
            let p = (if a_low { tau[0] } else { 1.0 - tau[0] }) * (if a_high { tau[1] } else { 1.0 - tau[1] });
            if a_low && a_high {
                both += p;
            }
        }
        // Conditional on the AC attempting.
        let low_given = both / tau[0];
        assert_relative_eq!(zone_collision_prob(0, &eligible, &tau, &t).unwrap(), low_given, epsilon = 1e-15);
        assert_relative_eq!(low_given, tau[1], epsilon = 1e-15);
        assert_eq!(zone_collision_prob(1, &eligible, &tau, &t).unwrap(), 0.0);
    }

    #[test]
    fn ineligible_class_is_an_error() {
        let t = table(&[(2, &[1]), (2, &[3])]);
        assert!(zone_collision_prob(0, &[1], &[0.1, 0.1], &t).is_err());
    }

    #[test]
    fn transmission_probability_examples() {
        let t = table(&[(2, &[3])]);
        assert_eq!(zone_transmission_prob(&[0], &[0.0], &t), 0.0);
        assert_relative_eq!(zone_transmission_prob(&[0], &[0.5], &t), 0.75);
        let t = table(&[(2, &[1]), (3, &[3])]);
        let tau = [0.1, 0.2];
        assert!(zone_transmission_prob(&[0, 1], &tau, &t) >= zone_transmission_prob(&[1], &tau, &t));
    }

    #[test]
    fn occupancy_examples() {
        let b = slot_occupancy(&[0.0; 8]);
        assert!(b.0.iter().all(|&x| (x - 0.125).abs() < 1e-15));
        let b = slot_occupancy(&[0.5, 0.5]);
        assert_relative_eq!(b.0[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(b.0[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn average_collision_examples() {
        let b = slot_occupancy(&[0.3, 0.2, 0.4, 0.1]);
        assert_relative_eq!(average_collision_prob(0, &b, &[0.25; 4]).unwrap(), 0.25, epsilon = 1e-15);
        // Two-zone toy with hand-set numbers: offset 1, b' = (0.4, 0.3, 0.2, 0.1),
        // p_c = (-, 0.2, 0.5, 0.5): (0.3*0.2 + 0.2*0.5 + 0.1*0.5) / 0.6 = 0.35.
        let b = SlotOccupancy(vec![0.4, 0.3, 0.2, 0.1]);
        assert_relative_eq!(
            average_collision_prob(1, &b, &[f64::NAN, 0.2, 0.5, 0.5]).unwrap(),
            0.35,
            epsilon = 1e-15
        );
        assert!(average_collision_prob(4, &b, &[0.0; 4]).is_err());
    }

    #[test]
    fn backoff_examples() {
        let ac = AcParams {
            aifsn: 2,
            cw_min: 15,
            cw_max: 31,
            max_doublings: 1,
            retry_limit: 3,
        };
        assert_eq!(mean_backoff_slots(0.0, &ac).unwrap(), 7.5);
        let flat = AcParams { cw_max: 15, max_doublings: 0, ..ac };
        assert_relative_eq!(mean_backoff_slots(0.7, &flat).unwrap(), 7.5, epsilon = 1e-12);
        // p = 0.5, W = (15, 31, 31):
        // (7.5 + 0.5*15.5 + 0.25*15.5) / (1 + 0.5 + 0.25) = 19.125/1.75.
        assert_relative_eq!(mean_backoff_slots(0.5, &ac).unwrap(), 19.125 / 1.75, epsilon = 1e-12);
        assert!(mean_backoff_slots(1.0, &ac).is_err());
    }

    #[test]
    fn zone_labels_follow_aifs() {
        // AC1 (AIFSN 3) and AC3 (AIFSN 2): slot 1 only AC3, then both.
        let t = table(&[(2, &[1]), (2, &[3])]);
        let z = ZoneStructure::new(&t).unwrap();
        assert_eq!(z.slot(1), &[1]);
        assert_eq!(z.slot(2), &[0, 1]);
        assert_eq!(z.labels[0], 3);
        assert_eq!(z.labels[1], 1);
        assert_eq!(z.zones().len(), 2);
    }

    #[test]
    fn degenerate_zone_structure_fails_fast() {
        let mut a = acs();
        a.0[1] = Some(AcParams::new(9, 7, 7, 7));
        a.0[2] = None;
        a.0[3] = Some(AcParams::new(2, 7, 7, 7));
        let stations = vec![
            StationSpec::new("a", 1, vec![TrafficDescriptor::saturated(1, 100)]),
            StationSpec::new("b", 1, vec![TrafficDescriptor::saturated(3, 100)]),
        ];
        let t = derive_traffic_classes(&stations, &a).unwrap();
        assert!(matches!(ZoneStructure::new(&t), Err(Error::Zones(_))));
    }

    #[test]
    fn lone_station_solution() {
        let t = table(&[(1, &[3])]);
        let phy = PhyParams::default();
        let times = exchange_times(&t, &phy, AccessMode::Basic);
        let s = solve_fixed_point(&t, &times, &SolverConfig::default()).unwrap();
        assert_eq!(s.p_c[0], 0.0);
        assert_eq!(s.p_drop[0], 0.0);
        // Service time equals the cycle time when nothing is ever dropped.
        assert_eq!(s.service_time[0], s.cycle_time[0]);
        assert_relative_eq!(s.cycle_time[0], times.success[0] + 3.5 * phy.slot_time_us, epsilon = 1e-9);
    }

    #[test]
    fn single_active_user_is_served_in_t_s() {
        let t = table(&[(4, &[3]), (2, &[2])]);
        let phy = PhyParams::default();
        let out = service_time(&t, &phy, AccessMode::Basic, &[0, 1], &SolverConfig::default()).unwrap();
        let times = exchange_times(&t, &phy, AccessMode::Basic);
        assert_eq!(out[0], None);
        assert_eq!(out[1], Some(times.success[1]));
    }
}
