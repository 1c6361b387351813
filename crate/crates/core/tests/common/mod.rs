//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use edca_core::scenario::AcParams;

/// Classical per-stage backoff chain for one saturated station with a
/// constant collision probability `p`. States are (stage, counter); the
/// stationary distribution comes from lazy power iteration, and τ is the
/// mass of the counter-zero states.
pub fn dtmc_tau(p: f64, ac: &AcParams) -> f64 {
    let windows: Vec<usize> = (1..=ac.retry_limit).map(|k| ac.window(k) as usize + 1).collect();
    let offsets: Vec<usize> = windows
        .iter()
        .scan(0, |acc, w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let states: usize = windows.iter().sum();
    let mut pi = vec![1.0 / states as f64; states];
    let stages = windows.len();
    for _ in 0..200_000 {
        let mut next = vec![0.0; states];
        for i in 0..stages {
            for k in 1..windows[i] {
                next[offsets[i] + k - 1] += pi[offsets[i] + k];
            }
            let attempt = pi[offsets[i]];
            let (restart, escalate) = if i + 1 < stages {
                (attempt * (1.0 - p), attempt * p)
            } else {
                (attempt, 0.0)
            };
            for k in 0..windows[0] {
                next[k] += restart / windows[0] as f64;
            }
            if escalate > 0.0 {
                for k in 0..windows[i + 1] {
                    next[offsets[i + 1] + k] += escalate / windows[i + 1] as f64;
                }
            }
        }
        let mut delta: f64 = 0.0;
        for (x, y) in pi.iter_mut().zip(&next) {
            let z = 0.5 * *x + 0.5 * y;
            delta = delta.max((z - *x).abs());
            *x = z;
        }
        if delta < 1e-15 {
            break;
        }
    }
    offsets.iter().map(|&o| pi[o]).sum()
}

/// Symmetric n-station fixed point p = 1 − (1 − τ(p))^{n−1} by bisection.
pub fn dtmc_fixed_point(n: u32, ac: &AcParams) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let tau = dtmc_tau(mid, ac);
        if mid - (1.0 - (1.0 - tau).powi(n as i32 - 1)) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    (dtmc_tau(p, ac), p)
}
