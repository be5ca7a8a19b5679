//! The ten acceptance checks. Runs without the test harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::time::Instant;

use obusim_core::geometry::{normalize_angle, Pose};
use obusim_core::grid::GridIndex;
use obusim_core::metrics::{avg_bandwidth, cpr, MetricsIndex, RunData, TickLine};
use obusim_core::perception::{from_camera_frame, get_visible_lines, to_camera_frame, CameraPose};
use obusim_core::scenario::{run, ScenarioConfig, Simulation};
use obusim_core::trace::{synth_traffic, Trace, VehicleId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cfg(mix: &[(&str, f64)], seed: u64, workers: usize) -> ScenarioConfig {
    ScenarioConfig { seed, workers, mix: mix.iter().map(|(t, w)| (t.to_string(), *w)).collect(), ..Default::default() }
}

fn run_to_dir(c: &ScenarioConfig, trace: &Trace) -> Result<(tempfile::TempDir, RunData), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run(c, trace, dir.path()).map_err(|e| e.to_string())?;
    let data = RunData::load(dir.path()).map_err(|e| e.to_string())?;
    Ok((dir, data))
}

fn occlusion_oracle() -> Outcome {
    let start = Instant::now();
    let mut candidates = 0;
    for seed in 0..1000 {
        let views = common::random_scene(seed, 50, 100.0);
        candidates += views.len();
        let fast = get_visible_lines(&views).map_err(|e| e.to_string())?;
        let slow = common::naive_visible(&views);
        ensure(fast == slow, || format!("scene {seed}: fast {} visible, oracle {}", fast.len(), slow.len()))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("1000 scenes, {candidates} candidates, {secs:.2} s"))
}

fn grid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = 0;
    for conf in 0..200 {
        let n = rng.random_range(1..=2000);
        let extent = rng.random_range(50.0..3000.0);
        let cell = rng.random_range(5.0..400.0);
        let states: Vec<_> = (0..n).map(|i| common::random_state(&mut rng, i, extent)).collect();
        let grid = GridIndex::rebuild(&states, cell).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let ego = VehicleId(rng.random_range(0..n));
            let radius = rng.random_range(0.0..=cell);
            let got = grid.get_nearby_vehicles(ego, radius).map_err(|e| e.to_string())?;
            let want = common::naive_nearby(&states, ego, radius);
            ensure(got == want, || format!("config {conf}: ego {ego} r {radius}: {} vs {}", got.len(), want.len()))?;
            queries += 1;
        }
    }
    Ok(format!("200 configurations, {queries} queries"))
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let cam = CameraPose::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4), rng.random_range(-PI..PI));
        let mut pose =
            || Pose::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4), rng.random_range(-PI..PI));
        let (p, q) = (pose(), pose());
        let (pc, qc) = (to_camera_frame(cam, p), to_camera_frame(cam, q));
        let d_world = p.position().dist(q.position());
        let d_cam = pc.position().dist(qc.position());
        let err_iso = (d_world - d_cam).abs();
        let back = from_camera_frame(cam, pc);
        let err_inv =
            (back.x - p.x).abs().max((back.y - p.y).abs()).max(normalize_angle(back.heading - p.heading).abs());
        worst = worst.max(err_iso).max(err_inv);
        ensure(err_iso <= 1e-9 && err_inv <= 1e-9, || format!("input {i}: isometry {err_iso:e}, inverse {err_inv:e}"))?;
    }
    Ok(format!("10000 inputs, max error {worst:.1e}"))
}

fn determinism() -> Outcome {
    let trace = synth_traffic(11, 500, 100, 1500.0);
    let mix = [("ConnectedVehicle", 1.0), ("PoTVehicle", 1.0), ("SpamAttacker", 0.2), ("ReplayAttacker", 0.2)];
    let mut files = Vec::new();
    for workers in [1, 1, 8] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        run(&cfg(&mix, 99, workers), &trace, dir.path()).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(dir.path().join(f)).map_err(|e| e.to_string());
        files.push((read("metrics.jsonl")?, read("metrics.idx")?));
    }
    ensure(files[0] == files[1], || "same seed, different bytes".into())?;
    ensure(files[0] == files[2], || "1 vs 8 workers differ".into())?;
    Ok(format!("{} bytes of metrics identical across 3 runs (1, 1, 8 workers)", files[0].0.len()))
}

fn metric_semantics() -> Outcome {
    let trace = synth_traffic(12, 300, 30, 800.0);
    let (_d, unconnected) = run_to_dir(&cfg(&[("UnconnectedVehicle", 1.0)], 1, 2), &trace)?;
    let mut cells = 0;
    for line in &unconnected.ticks {
        let map = cpr(&unconnected, line.tick, 100.0).map_err(|e| e.to_string())?;
        cells += map.len();
        ensure(map.values().all(|&r| r == 0.0), || format!("tick {}: nonzero CPR", line.tick))?;
    }
    ensure(cells > 0, || "no CPR cells at all".into())?;
    ensure(avg_bandwidth(&unconnected).iter().all(|&(_, b)| b == 0.0), || "unconnected bandwidth".into())?;

    let (_d, silent) = run_to_dir(&cfg(&[("SilenceAttacker", 1.0)], 1, 2), &trace)?;
    let sends = silent.ticks.iter().flat_map(|l| &l.vehicles).filter(|v| v.bytes_sent != 0).count();
    ensure(sends == 0, || format!("{sends} silent records with bytes"))?;
    Ok(format!("{cells} CPR cells all 0; bandwidth 0; silence sends 0 bytes"))
}

fn record<'a>(line: &'a TickLine, id: &str) -> &'a obusim_core::metrics::MetricsRecord {
    line.vehicles.iter().find(|v| v.id == id).expect("vehicle in record")
}

fn cooperative_perception() -> Outcome {
    // A sees C ahead and tells B; C's plate is hidden from B behind A.
    let trace = common::static_trace(
        &[("A", Pose::new(0.0, 0.0, 0.0)), ("B", Pose::new(-10.0, 0.0, 0.0)), ("C", Pose::new(20.0, 0.0, 0.0))],
        &[],
        3,
    );
    let mut sim = Simulation::new(cfg(&[("ConnectedVehicle", 1.0)], 0, 1), &trace).map_err(|e| e.to_string())?;
    let counts = |line: &TickLine, id: &str| {
        let r = record(line, id);
        (r.local_objects, r.received_objects, r.all_objects)
    };
    let step = |sim: &mut Simulation, t: usize| {
        sim.step(&trace.ticks()[t]).map(|r| TickLine { tick: r.tick, vehicles: r.records }).map_err(|e| e.to_string())
    };
    let t0 = step(&mut sim, 0)?;
    let want0 = [("A", (1, 0, 1)), ("B", (1, 0, 1)), ("C", (0, 0, 0))];
    for (id, w) in want0 {
        ensure(counts(&t0, id) == w, || format!("tick 0 {id}: {:?} != {w:?}", counts(&t0, id)))?;
    }
    let b = sim.vehicles().find(|v| v.name == "B").unwrap();
    let c_id = trace.id_of("C").unwrap();
    ensure(!b.counters().all.contains(&c_id), || "B knows C at tick 0".into())?;
    let t1 = step(&mut sim, 1)?;
    let want1 = [("A", (1, 0, 1)), ("B", (1, 1, 2)), ("C", (0, 1, 1))];
    for (id, w) in want1 {
        ensure(counts(&t1, id) == w, || format!("tick 1 {id}: {:?} != {w:?}", counts(&t1, id)))?;
    }
    let b = sim.vehicles().find(|v| v.name == "B").unwrap();
    ensure(b.counters().received.contains(&c_id), || "B did not learn C".into())?;
    Ok("B learns C at tick 1; counts A (1,0,1) B (1,1,2) C (0,1,1)".into())
}

fn pot_ttv() -> Outcome {
    // V sees target T from tick 0. P1 arrives next to V at tick 1, P2 at
    // tick 3; both then see T and prove it.
    let trace = common::static_trace(
        &[
            ("V", Pose::new(0.0, 0.0, 0.0)),
            ("T", Pose::new(50.0, 0.0, 0.0)),
            ("P1", Pose::new(0.0, 200.0, 0.0)),
            ("P2", Pose::new(0.0, -200.0, 0.0)),
        ],
        &[(1, "P1", Pose::new(0.0, 10.0, 0.0)), (3, "P2", Pose::new(0.0, -10.0, 0.0))],
        6,
    );
    let mut c = cfg(&[("PoTVehicle", 1.0)], 0, 1);
    c.assign.insert("T".into(), "UnconnectedVehicle".into());
    let (_d, data) = run_to_dir(&c, &trace)?;
    let hist = |t: u32| obusim_core::metrics::ttv_distribution(&data, t).map_err(|e| e.to_string());
    let want: [BTreeMap<u32, u64>; 6] = [
        BTreeMap::new(),
        BTreeMap::new(),
        BTreeMap::from([(1, 1)]),
        BTreeMap::from([(1, 1)]),
        BTreeMap::from([(1, 1), (3, 1), (4, 1)]),
        BTreeMap::from([(1, 1), (3, 1), (4, 1)]),
    ];
    for (t, w) in want.iter().enumerate() {
        let got = hist(t as u32)?;
        ensure(&got == w, || format!("tick {t}: {got:?} != {w:?}"))?;
    }
    let per: Vec<_> = ["V", "P1", "P2"].iter().map(|id| record(&data.ticks[5], id).ttv.clone()).collect();
    ensure(per == [BTreeMap::from([(4, 1)]), BTreeMap::from([(3, 1)]), BTreeMap::from([(1, 1)])], || {
        format!("per-vehicle {per:?}")
    })?;
    Ok("histogram {1:1} at tick 2, {1:1, 3:1, 4:1} from tick 4".into())
}

fn performance() -> Outcome {
    let (n, ticks) = (8000, 60);
    let trace = synth_traffic(8, n, ticks, 5000.0);
    let mut sim = Simulation::new(cfg(&[("ConnectedVehicle", 1.0)], 8, 1), &trace).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut writer = obusim_core::metrics::MetricsWriter::create(dir.path()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut sent = 0u64;
    for frame in trace.ticks() {
        let r = sim.step(frame).map_err(|e| e.to_string())?;
        sent += r.records.iter().map(|v| v.bytes_sent).sum::<u64>();
        writer.record_tick(r.tick, &r.records).map_err(|e| e.to_string())?;
    }
    writer.finish().map_err(|e| e.to_string())?;
    let per_tick = start.elapsed().as_secs_f64() / ticks as f64;
    let per_vehicle_us = per_tick / n as f64 * 1e6;
    ensure(sent > 0, || "no traffic".into())?;
    let msg = format!("{:.1} ms/tick, {per_vehicle_us:.1} us/vehicle/tick, {sent} bytes sent", per_tick * 1e3);
    ensure(per_tick <= 0.6, || msg.clone())?;
    Ok(msg)
}

fn index_correctness() -> Outcome {
    let trace = synth_traffic(13, 20, 1000, 300.0);
    let (dir, _) = run_to_dir(&cfg(&[("ConnectedVehicle", 1.0), ("PoTVehicle", 1.0)], 5, 2), &trace)?;
    let index = MetricsIndex::load(&dir.path().join("metrics.idx")).map_err(|e| e.to_string())?;
    let mut data = File::open(dir.path().join("metrics.jsonl")).map_err(|e| e.to_string())?;
    let scan = BufReader::new(File::open(dir.path().join("metrics.jsonl")).map_err(|e| e.to_string())?);
    let mut n = 0;
    for line in scan.lines() {
        let line: TickLine = serde_json::from_str(&line.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let sought = obusim_core::metrics::seek(&index, &mut data, line.tick).map_err(|e| e.to_string())?;
        ensure(sought == line, || format!("tick {} differs", line.tick))?;
        n += 1;
    }
    ensure(n == 1000 && index.entries().len() == 1000, || format!("{n} lines, {} entries", index.entries().len()))?;
    Ok("1000 ticks, seek equals scan".into())
}

fn attack_sanity() -> Outcome {
    let trace = synth_traffic(14, 400, 40, 1000.0);
    let honest_total = |data: &RunData, honest: &dyn Fn(&str) -> bool| -> u64 {
        data.ticks.last().map_or(0, |l| l.vehicles.iter().filter(|v| honest(&v.id)).map(|v| v.received_objects).sum())
    };
    let attacked_cfg = cfg(&[("ConnectedVehicle", 0.9), ("SpamAttacker", 0.1)], 21, 2);
    let (_a, attacked) = run_to_dir(&attacked_cfg, &trace)?;
    let (_b, baseline) = run_to_dir(&cfg(&[("ConnectedVehicle", 1.0)], 21, 2), &trace)?;
    let honest: std::collections::BTreeSet<String> = attacked
        .ticks
        .iter()
        .flat_map(|l| &l.vehicles)
        .filter(|v| v.vehicle_type == "ConnectedVehicle")
        .map(|v| v.id.clone())
        .collect();
    let spammers = trace.names().len() - honest.len();
    let is_honest = |id: &str| honest.contains(id);
    let (with, without) = (honest_total(&attacked, &is_honest), honest_total(&baseline, &is_honest));
    ensure(spammers > 0, || "no attackers drawn".into())?;
    let msg = format!("{spammers} spammers; honest received_objects {with} vs baseline {without}");
    ensure(with > without, || msg.clone())?;
    Ok(msg)
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("1 occlusion oracle equivalence", occlusion_oracle),
        ("2 spatial index oracle equivalence", grid_oracle),
        ("3 camera transform isometry and inverse", geometry),
        ("4 determinism across runs and workers", determinism),
        ("5 metric semantics", metric_semantics),
        ("6 end-to-end cooperative perception", cooperative_perception),
        ("7 proof-of-traffic TTV", pot_ttv),
        ("8 performance", performance),
        ("9 index correctness", index_correctness),
        ("10 spam attack sanity", attack_sanity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
