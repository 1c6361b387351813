//! Browser bindings for the EDCA model. Each export wraps a plain function
//! that native tests can call directly.

use edca_core::capacity::{activity_pdf as class_activity_pdf, CapacityModel};
use edca_core::saturation::solve_fixed_point;
use edca_core::scenario::{
    derive_traffic_classes, AcParams, AcTable, AccessMode, PhyParams, SolverConfig, StationSpec, TrafficClassTable,
    TrafficDescriptor,
};
use edca_core::timing::exchange_times;
use edca_core::Result;
use wasm_bindgen::prelude::*;

fn access(rts_cts: bool) -> AccessMode {
    if rts_cts {
        AccessMode::RtsCts
    } else {
        AccessMode::Basic
    }
}

/// Normalized throughput of AC1 and AC3 with `n` saturated stations of each,
/// for n = 1..=n_max, flattened as `[ac1(1), ac3(1), ac1(2), ...]`.
pub fn saturation_points(n_max: u32, payload_bytes: u32, rts_cts: bool) -> Result<Vec<f64>> {
    let acs = AcTable([None, Some(AcParams::new(3, 31, 255, 7)), None, Some(AcParams::new(2, 15, 127, 7))]);
    let phy = PhyParams::default();
    let mut out = Vec::with_capacity(2 * n_max as usize);
    for n in 1..=n_max {
        let stations = [
            StationSpec::new("low", n, vec![TrafficDescriptor::saturated(1, payload_bytes)]),
            StationSpec::new("high", n, vec![TrafficDescriptor::saturated(3, payload_bytes)]),
        ];
        let table = derive_traffic_classes(&stations, &acs)?;
        let sol = solve_fixed_point(&table, &exchange_times(&table, &phy, access(rts_cts)), &SolverConfig::default())?;
        out.extend_from_slice(&sol.throughput);
    }
    Ok(out)
}

/// `n` phones each sending one voice stream up, plus an AP carrying `n`
/// streams down. Class 0 is the phones, class 1 the AP.
fn voice_table(n: u32, rate_kbps: f64, interval_ms: f64) -> Result<TrafficClassTable> {
    let bytes = (rate_kbps * interval_ms / 8.0).round().max(1.0) as u32;
    let up = TrafficDescriptor::cbr(3, bytes, interval_ms);
    let mut down = up.clone();
    down.flows = n;
    let stations = [StationSpec::new("phones", n, vec![up]), StationSpec::access_point(vec![down])];
    derive_traffic_classes(&stations, &AcTable::default())
}

fn model(rts_cts: bool) -> CapacityModel {
    CapacityModel::new(PhyParams::default(), access(rts_cts), SolverConfig::default(), 1e-6)
}

/// Utilization of the phone and AP classes as two-way calls are added one
/// by one, `[ρ_phone(1), ρ_ap(1), ρ_phone(2), ...]`. Stops after the first
/// call count whose largest utilization exceeds 1, or at `n_max`.
pub fn voice_rho_points(rate_kbps: f64, interval_ms: f64, n_max: u32, rts_cts: bool) -> Result<Vec<f64>> {
    let m = model(rts_cts);
    let mut out = Vec::new();
    for n in 1..=n_max {
        let rho = match m.solve_utilization(&voice_table(n, rate_kbps, interval_ms)?) {
            Ok(s) => s.rho,
            // No stable operating point: the call count is past capacity.
            Err(_) => vec![f64::INFINITY, f64::INFINITY],
        };
        let over = rho.iter().any(|&r| r > 1.0);
        out.extend_from_slice(&rho);
        if over {
            break;
        }
    }
    Ok(out)
}

/// Probability that k = 1, 2, ... stations are active (counting the tagged
/// one) when a packet of the tagged class is served, with `n` calls up.
pub fn activity_points(rate_kbps: f64, interval_ms: f64, n: u32, ap_tagged: bool, rts_cts: bool) -> Result<Vec<f64>> {
    let table = voice_table(n, rate_kbps, interval_ms)?;
    let rho = model(rts_cts).solve_utilization(&table)?.rho;
    let j = table.classes.iter().position(|c| c.class_tag.is_some() == ap_tagged).unwrap_or(0);
    let mut pdf = class_activity_pdf(j, &rho, &table);
    // Index 0 (nobody active) is always empty under this conditioning.
    pdf.remove(0);
    Ok(pdf)
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn saturation_curve(n_max: u32, payload_bytes: u32, rts_cts: bool) -> std::result::Result<Vec<f64>, JsError> {
    js(saturation_points(n_max, payload_bytes, rts_cts))
}

#[wasm_bindgen]
pub fn voice_rho_curve(rate_kbps: f64, interval_ms: f64, n_max: u32, rts_cts: bool) -> std::result::Result<Vec<f64>, JsError> {
    js(voice_rho_points(rate_kbps, interval_ms, n_max, rts_cts))
}

#[wasm_bindgen]
pub fn activity_distribution(
    rate_kbps: f64,
    interval_ms: f64,
    n: u32,
    ap_tagged: bool,
    rts_cts: bool,
) -> std::result::Result<Vec<f64>, JsError> {
    js(activity_points(rate_kbps, interval_ms, n, ap_tagged, rts_cts))
}
