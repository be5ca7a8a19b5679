//! Reference implementations and scene generators shared by the
//! integration tests. The oracles are deliberately naive.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use obusim_core::geometry::Pose;
use obusim_core::perception::{project_candidates, PerceptionConfig, ProjectionView};
use obusim_core::trace::{from_samples, IngestOptions, Trace, VehicleId, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Arc on the circle: `start` plus a non-negative sweep.
#[derive(Debug, Clone, Copy)]
struct Arc {
    start: f64,
    len: f64,
}

fn arc(lo: f64, hi: f64) -> Arc {
    Arc { start: lo, len: hi - lo }
}

/// Does the closed arc `b` meet the plate arc `p`? A plate with positive
/// sweep is open at both ends; a zero-sweep plate is a single point.
fn plate_meets_box(p: Arc, b: Arc) -> bool {
    // offset of the box start from the plate start, in [0, 2pi)
    let d = (b.start - p.start).rem_euclid(TAU);
    if p.len == 0.0 {
        return d == 0.0 || d + b.len >= TAU;
    }
    (d < p.len && (d > 0.0 || b.len > 0.0)) || d + b.len > TAU
}

/// O(n^2) occlusion: candidate `i` (sorted nearest first) is visible when
/// no nearer box meets its plate.
pub fn naive_visible(views: &[ProjectionView]) -> Vec<ProjectionView> {
    views
        .iter()
        .enumerate()
        .filter(|(i, v)| {
            let plate = arc(v.rho1, v.rho2);
            !views[..*i].iter().any(|w| plate_meets_box(plate, arc(w.delta1, w.delta2)))
        })
        .map(|(_, v)| *v)
        .collect()
}

/// Full scan: everything within `radius` of `ego`, excluding it, by id.
pub fn naive_nearby(states: &[VehicleState], ego: VehicleId, radius: f64) -> Vec<VehicleState> {
    let e = states.iter().find(|s| s.id == ego).expect("ego present");
    let mut out: Vec<VehicleState> = states
        .iter()
        .filter(|s| s.id != ego && ((s.x - e.x).powi(2) + (s.y - e.y).powi(2)).sqrt() <= radius)
        .copied()
        .collect();
    out.sort_by_key(|s| s.id);
    out
}

pub fn random_state(rng: &mut ChaCha8Rng, id: u32, half_extent: f64) -> VehicleState {
    VehicleState {
        id: VehicleId(id),
        x: rng.random_range(-half_extent..half_extent),
        y: rng.random_range(-half_extent..half_extent),
        heading: rng.random_range(-PI..PI),
        length: rng.random_range(2.5..12.0),
        width: rng.random_range(1.4..2.6),
    }
}

/// A random scene around an ego at the origin, reduced to sorted
/// candidate views.
pub fn random_scene(seed: u64, max_vehicles: usize, extent: f64) -> Vec<ProjectionView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=max_vehicles);
    let ego =
        VehicleState { id: VehicleId(0), x: 0.0, y: 0.0, heading: rng.random_range(-PI..PI), length: 4.5, width: 1.8 };
    let others: Vec<VehicleState> = (1..=n as u32).map(|i| random_state(&mut rng, i, extent)).collect();
    let cfg = PerceptionConfig { fov_half_angle: PI / 2.0, max_range: 2.0 * extent, ..Default::default() };
    project_candidates(&ego, &others, &cfg).into_iter().map(|c| c.view).collect()
}

/// Static vehicles for `ticks` ticks; `moves` lists `(from_tick, name, pose)`
/// overrides applied from that tick on.
pub fn static_trace(base: &[(&str, Pose)], moves: &[(u32, &str, Pose)], ticks: u32) -> Trace {
    let mut samples = Vec::new();
    for t in 0..ticks {
        for (name, pose) in base {
            let pose = moves.iter().rfind(|(from, n, _)| *from <= t && n == name).map_or(*pose, |(_, _, p)| *p);
            samples.push((t, *name, pose));
        }
    }
    from_samples(samples, IngestOptions::default()).unwrap()
}
