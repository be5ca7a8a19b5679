use super::*;
use crate::geometry::Pose;
use crate::trace::{from_samples, synth_traffic, IngestOptions};

fn cfg_with(mix: &[(&str, f64)]) -> ScenarioConfig {
    ScenarioConfig { mix: mix.iter().map(|(t, w)| (t.to_string(), *w)).collect(), ..Default::default() }
}

fn two_cars(ticks: Tick) -> Trace {
    let mut s = Vec::new();
    for t in 0..ticks {
        s.push((t, "a", Pose::new(0.0, 0.0, 0.0)));
        s.push((t, "b", Pose::new(-20.0, 0.0, 0.0)));
    }
    from_samples(s, IngestOptions::default()).unwrap()
}

#[test]
fn empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let s = run(&ScenarioConfig::default(), &Trace::default(), dir.path()).unwrap();
    assert_eq!((s.ticks, s.vehicles_seen), (0, 0));
    assert_eq!(std::fs::read(&s.metrics).unwrap(), b"");
    assert_eq!(std::fs::read(&s.index).unwrap(), b"");
}

#[test]
fn two_connected_vehicles() {
    let cfg = cfg_with(&[("ConnectedVehicle", 1.0)]);
    let trace = two_cars(3);
    let mut sim = Simulation::new(cfg, &trace).unwrap();
    let r0 = sim.step(&trace.ticks()[0]).unwrap();
    // b sees a ahead; a sees nothing
    let (a, b) = (&r0.records[0], &r0.records[1]);
    assert_eq!((a.id.as_str(), a.local_objects, a.bytes_sent), ("a", 0, 0));
    assert_eq!((b.id.as_str(), b.local_objects, b.bytes_sent), ("b", 1, 66));
    let r1 = sim.step(&trace.ticks()[1]).unwrap();
    assert_eq!(r1.records[0].received_objects, 0, "a's own plate is not news");
    assert_eq!(r1.records[1].received_objects, 0);
    assert_eq!(r1.records[1].bytes_sent, 66);
}

#[test]
fn receiver_learns_next_tick() {
    // c is ahead of a; b is behind a and cannot see c past a
    let mut s = Vec::new();
    for t in 0..3 {
        s.push((t, "a", Pose::new(0.0, 0.0, 0.0)));
        s.push((t, "c", Pose::new(20.0, 0.0, 0.0)));
        s.push((t, "b", Pose::new(-10.0, 0.0, 0.0)));
    }
    let trace = from_samples(s, IngestOptions::default()).unwrap();
    let mut sim = Simulation::new(cfg_with(&[("ConnectedVehicle", 1.0)]), &trace).unwrap();
    let r0 = sim.step(&trace.ticks()[0]).unwrap();
    let b0 = r0.records.iter().find(|r| r.id == "b").unwrap();
    assert_eq!((b0.local_objects, b0.all_objects), (1, 1));
    let r1 = sim.step(&trace.ticks()[1]).unwrap();
    let b1 = r1.records.iter().find(|r| r.id == "b").unwrap();
    assert_eq!((b1.local_objects, b1.received_objects, b1.all_objects), (1, 1, 2));
}

#[test]
fn alive_count_follows_trace_and_respawn_is_fresh() {
    let mut s = vec![(0, "a", Pose::new(0.0, 0.0, 0.0)), (0, "b", Pose::new(-20.0, 0.0, 0.0))];
    s.push((1, "a", Pose::new(0.0, 0.0, 0.0)));
    s.push((2, "a", Pose::new(0.0, 0.0, 0.0)));
    s.push((2, "b", Pose::new(-20.0, 0.0, 0.0)));
    let trace = from_samples(s, IngestOptions::default()).unwrap();
    let mut sim = Simulation::new(cfg_with(&[("ConnectedVehicle", 1.0)]), &trace).unwrap();
    let counts: Vec<usize> = trace.ticks().iter().map(|f| sim.step(f).unwrap().records.len()).collect();
    assert_eq!(counts, vec![2, 1, 2]);
    let b = sim.vehicles().find(|v| v.name == "b").unwrap();
    assert_eq!(b.station, Some(StationId(2)), "respawned vehicles get a new station");
    assert_eq!(b.counters().local.len(), 1);
}

#[test]
fn type_assignment_is_stable_and_follows_weights() {
    let cfg = cfg_with(&[("ConnectedVehicle", 3.0), ("SpamAttacker", 1.0)]);
    let names: Vec<String> = (0..4000).map(|i| format!("veh{i}")).collect();
    let spam = names.iter().filter(|n| assign_type(&cfg, n) == "SpamAttacker").count();
    assert!((800..1200).contains(&spam), "{spam}");
    for n in &names {
        assert_eq!(assign_type(&cfg, n), assign_type(&cfg.clone(), n));
    }
    let mut fixed = cfg.clone();
    fixed.assign.insert("veh1".into(), "DummyVehicle".into());
    assert_eq!(assign_type(&fixed, "veh1"), "DummyVehicle");
    let other_seed = ScenarioConfig { seed: 1, ..cfg.clone() };
    assert!(names.iter().any(|n| assign_type(&cfg, n) != assign_type(&other_seed, n)));
}

#[test]
fn deterministic_across_workers() {
    let trace = synth_traffic(5, 150, 12, 600.0);
    let mut outs = Vec::new();
    for workers in [1, 4] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig {
            workers,
            seed: 3,
            ..cfg_with(&[("PoTVehicle", 1.0), ("ReplayAttacker", 0.2), ("SpamAttacker", 0.2)])
        };
        run(&cfg, &trace, dir.path()).unwrap();
        outs.push((
            std::fs::read(dir.path().join("metrics.jsonl")).unwrap(),
            std::fs::read(dir.path().join("metrics.idx")).unwrap(),
        ));
    }
    assert_eq!(outs[0], outs[1]);
    assert!(!outs[0].0.is_empty());
}

#[test]
fn tick_range_and_timings() {
    let trace = two_cars(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { ticks: "2:5".parse().unwrap(), ..Default::default() };
    let s = run(&cfg, &trace, dir.path()).unwrap();
    assert_eq!(s.ticks, 3);
    let timings = std::fs::read_to_string(&s.timings).unwrap();
    let lines: Vec<&str> = timings.lines().collect();
    assert_eq!(lines[0], TIMINGS_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2,2,"));
}

#[test]
fn reports() {
    let trace = two_cars(4);
    let dir = tempfile::tempdir().unwrap();
    run(&cfg_with(&[("SilenceAttacker", 1.0)]), &trace, dir.path()).unwrap();
    let text = |kind: &str| {
        let mut out = Vec::new();
        report(dir.path(), kind.parse().unwrap(), ReportOptions::default(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    };
    assert_eq!(text("bandwidth"), "tick,avg_bytes_sent\n0,0\n1,0\n2,0\n3,0\n");
    assert_eq!(text("ttv"), "delay,count\n");
    // b sees a locally, nobody sends: ratio 0 in b's cell
    assert_eq!(text("cpr"), "cell_x,cell_y,ratio\n-1,0,0\n");
    assert_eq!(text("timing").lines().count(), 5);
    assert!("nope".parse::<ReportKind>().is_err());
    let missing = tempfile::tempdir().unwrap();
    assert!(report(missing.path(), ReportKind::Bandwidth, ReportOptions::default(), &mut Vec::new()).is_err());
}
