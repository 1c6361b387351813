use std::sync::Arc;

use edca_core::admission::{parse_events, AdmissionController, Direction, Event, Tspec, Verdict};
use edca_core::capacity::{analysis_capacity, CapacityModel};
use edca_core::scenario::Scenario;
use proptest::prelude::*;

fn g711() -> Scenario {
    Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/table1_g711.toml")).unwrap()
}

/// G.711 at 10 ms: 80 B of voice plus 40 B of RTP/UDP/IP every 10 ms.
fn call(k: usize, direction: Direction) -> Tspec {
    let tag = match direction {
        Direction::Uplink => "u",
        Direction::Downlink => "d",
    };
    Tspec {
        tsid: format!("{tag}{k}"),
        up: 6,
        direction,
        station: format!("phone{k}"),
        mean_rate_bps: 96_000.0,
        mean_packet_bytes: 120,
    }
}

/// Admit calls pair by pair until one half is rejected; returns the number
/// of complete calls.
fn fill(c: &mut AdmissionController) -> usize {
    for k in 0.. {
        if !c.addts(call(k, Direction::Uplink)).admitted() {
            return k;
        }
        if !c.addts(call(k, Direction::Downlink)).admitted() {
            c.delts(&format!("u{k}"));
            return k;
        }
    }
    unreachable!()
}

#[test]
fn call_by_call_admission_matches_the_capacity_scan() {
    let base = g711();
    let model = Arc::new(CapacityModel::for_scenario(&base));
    let scan = analysis_capacity(&base, &model, 1.0).unwrap();
    let mut c = AdmissionController::with_model(base, model);
    assert_eq!(fill(&mut c) as u32, scan.flows);
}

#[test]
fn released_calls_make_room() {
    let mut c = AdmissionController::new(g711());
    let n = fill(&mut c);
    let rejected = c.addts(call(n, Direction::Uplink));
    let rejected = if rejected.admitted() {
        c.addts(call(n, Direction::Downlink))
    } else {
        rejected
    };
    assert!(matches!(rejected.verdict, Verdict::Reject(_)), "{rejected:?}");
    assert!(rejected.max_rho.unwrap() > 1.0);
    c.delts(&format!("u{n}"));

    assert!(c.delts("u0").admitted());
    assert!(c.delts("d0").admitted());
    assert!(c.addts(call(n, Direction::Uplink)).admitted());
    assert!(c.addts(call(n, Direction::Downlink)).admitted());
}

#[test]
fn stricter_threshold_admits_fewer_calls() {
    let mut loose = AdmissionController::new(g711());
    let mut strict = AdmissionController::new(g711()).with_threshold(0.6).unwrap();
    assert!(fill(&mut strict) < fill(&mut loose));
    assert!(AdmissionController::new(g711()).with_threshold(0.0).is_err());
}

#[test]
fn replay_is_deterministic() {
    let text: String = (0..25)
        .flat_map(|k| {
            [
                format!("ADDTS u{k} 6 up phone{k} 96000 120\n"),
                format!("ADDTS d{k} 6 down phone{k} 96000 120\n"),
            ]
        })
        .chain(["DELTS u3\n".to_string(), "DELTS zz\n".to_string()])
        .collect();
    let events = parse_events(&text).unwrap();
    let a = AdmissionController::new(g711()).replay(events.clone());
    let b = AdmissionController::new(g711()).replay(events);
    assert_eq!(a, b);
    assert!(a.iter().any(|d| !d.admitted()));
    assert!(matches!(a.last().unwrap().verdict, Verdict::Error(_)));
}

#[test]
fn other_access_categories_are_checked_too() {
    let mut c = AdmissionController::new(g711());
    let video = Tspec {
        tsid: "cam".into(),
        up: 5,
        direction: Direction::Uplink,
        station: "cam".into(),
        mean_rate_bps: 174_000.0,
        mean_packet_bytes: 861,
    };
    let d = c.addts(video);
    assert!(d.admitted(), "{d:?}");
    assert!(d.rho.iter().any(|(label, _)| label.starts_with("AC2")));
    let flood = Tspec {
        tsid: "flood".into(),
        up: 5,
        direction: Direction::Uplink,
        station: "hog".into(),
        mean_rate_bps: 60e6,
        mean_packet_bytes: 1500,
    };
    assert!(!c.addts(flood).admitted());
}

fn arb_events() -> impl Strategy<Value = Vec<(bool, usize, bool)>> {
    prop::collection::vec((any::<bool>(), 0usize..40, any::<bool>()), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Whatever the sequence of requests, the admitted set always passes
    /// the utilization test on its own.
    #[test]
    fn admitted_set_always_passes(events in arb_events()) {
        let base = g711();
        let model = Arc::new(CapacityModel::for_scenario(&base));
        let mut c = AdmissionController::with_model(base, model.clone());
        for (add, k, up) in events {
            let direction = if up { Direction::Uplink } else { Direction::Downlink };
            let event = if add {
                Event::Add(call(k, direction))
            } else {
                Event::Delete(call(k, direction).tsid)
            };
            c.apply(event);
            if c.admitted().is_empty() {
                continue;
            }
            let table = c.scenario_with(None).unwrap().traffic_classes().unwrap();
            prop_assert!(model.check_threshold(&table, c.rho_threshold()).unwrap().passes(c.rho_threshold()));
        }
    }
}
