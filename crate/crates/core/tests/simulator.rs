use edca_core::scenario::{AcTable, Scenario, StationSpec, TrafficDescriptor};
use edca_core::simulator::{run, run_seeds, Outcome, SimOptions};
use proptest::prelude::*;

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

fn mixed() -> Scenario {
    Scenario::new(
        AcTable::default(),
        vec![
            StationSpec::new("bulk", 4, vec![TrafficDescriptor::saturated(1, 1000)]),
            StationSpec::new("phones", 6, vec![TrafficDescriptor::cbr(3, 80, 10.0)]),
            StationSpec::new("both", 2, vec![TrafficDescriptor::cbr(3, 160, 20.0), TrafficDescriptor::saturated(0, 500)]),
        ],
    )
    .unwrap()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let s = mixed();
    let a = run(&s, &opts(3.0), 11).unwrap();
    let b = run(&s, &opts(3.0), 11).unwrap();
    assert_eq!(a, b);
    let c = run(&s, &opts(3.0), 12).unwrap();
    assert_ne!(a.classes, c.classes);
    let many = run_seeds(&s, &opts(3.0), &[11, 12]).unwrap();
    assert_eq!(many[0], a);
    assert_eq!(many[1], c);
}

#[test]
fn every_packet_is_accounted_for() {
    let mut o = opts(3.0);
    o.trace_packets = true;
    let r = run(&mixed(), &o, 3).unwrap();
    let c = r.conservation;
    assert!(c.balanced(), "{c:?}");
    assert_eq!(r.trace.len() as u64, c.offered - c.residual);
    let count = |outcome| r.trace.iter().filter(|p| p.outcome == outcome).count() as u64;
    assert_eq!(count(Outcome::Delivered), c.delivered);
    assert_eq!(count(Outcome::RetryDrop), c.retry_drops);
    assert_eq!(count(Outcome::BufferDrop), c.buffer_drops);
    for p in &r.trace {
        assert!(p.end_ns >= p.enqueue_ns);
        if let Some(first) = p.first_attempt_ns {
            assert!(first >= p.enqueue_ns && first <= p.end_ns);
        }
    }
}

#[test]
fn higher_priority_gets_more_per_station() {
    let s = Scenario::new(
        AcTable::default(),
        vec![
            StationSpec::new("bk", 5, vec![TrafficDescriptor::saturated(1, 1000)]),
            StationSpec::new("vo", 5, vec![TrafficDescriptor::saturated(3, 1000)]),
        ],
    )
    .unwrap();
    let r = run(&s, &opts(5.0), 1).unwrap();
    let ac = |a: usize| r.classes.iter().find(|c| c.ac == a).unwrap().throughput;
    assert!(ac(3) > ac(1), "AC3 {} vs AC1 {}", ac(3), ac(1));
    assert!(r.total_throughput() < 1.0);
}

#[test]
fn late_packets_count_as_losses() {
    // 64 stations of 800 B every 10 ms overload the channel; queues grow
    // until packets miss the deadline or overflow the buffer.
    let s = Scenario::new(
        AcTable::default(),
        vec![StationSpec::new("phones", 64, vec![TrafficDescriptor::cbr(3, 800, 10.0)])],
    )
    .unwrap();
    let r = run(&s, &opts(3.0), 5).unwrap();
    assert!(r.conservation.balanced());
    assert!(r.max_loss() > 0.1);
    let m = &r.classes[0];
    assert!(m.late + m.buffer_drops > 0);
}

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    let group = (0usize..4, 1u32..5, prop::option::of((40u32..1500, 5.0..50.0f64)));
    prop::collection::vec(group, 1..4).prop_map(|groups| {
        let stations = groups
            .into_iter()
            .enumerate()
            .map(|(k, (ac, count, cbr))| {
                let traffic = match cbr {
                    Some((bytes, interval)) => TrafficDescriptor::cbr(ac, bytes, interval),
                    None => TrafficDescriptor::saturated(ac, 1000),
                };
                let mut st = StationSpec::new(format!("g{k}"), count, vec![traffic]);
                st.class_tag = Some(format!("g{k}"));
                st
            })
            .collect();
        Scenario::new(AcTable::default(), stations).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conservation_holds(s in arb_scenario(), seed in 0u64..1000) {
        let r = run(&s, &opts(1.5), seed).unwrap();
        prop_assert!(r.conservation.balanced(), "{:?}", r.conservation);
        prop_assert!(r.total_throughput() <= 1.0);
        for c in &r.classes {
            prop_assert!(c.delivered + c.late + c.retry_drops + c.buffer_drops <= c.offered);
            prop_assert!(c.internal_collisions + c.external_collisions <= c.attempts);
            let pdf: f64 = c.activity_pdf().iter().sum();
            prop_assert!(pdf == 0.0 || (pdf - 1.0).abs() < 1e-9);
        }
    }
}
