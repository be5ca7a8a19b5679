//! Scenario lifecycle: spawn vehicles from a trace, drive the tick loop and
//! write metrics.
//!
//! Every tick runs these phases, each a barrier:
//!
//! 1. positions: despawn vehicles missing from the trace, spawn new ones,
//!    rebuild the match table and grid;
//! 2. network: deliver last tick's broadcasts;
//! 3. perception, in parallel;
//! 4. agents, in parallel;
//! 5. network: queue this tick's broadcasts in vehicle order;
//! 6. metrics.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::cpm::{PerceivedObject, StationId};
use crate::grid::{GridError, GridIndex};
use crate::identity::{MatchError, MatchTable};
use crate::metrics::{MetricsError, MetricsRecord, MetricsWriter};
use crate::network::{Network, NetworkError, RadioMap};
use crate::perception::{perceive, PerceptionError};
use crate::sandbox::{build_vehicle, SandboxError, Vehicle, VehicleEnv};
use crate::seed::{combine, fnv1a, unit_interval};
use crate::trace::{self, Tick, Trace, TraceError, TraceFormat, TraceTick, VehicleId};

pub use config::{ScenarioConfig, TickRange, TraceSource};
pub use report::{report, ReportKind, ReportOptions};

pub const TIMINGS_FILE: &str = "timings.csv";
pub const TIMINGS_HEADER: &str = "tick,vehicles,position_s,perception_s,agents_s,network_s,metrics_s,total_s";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Wall-clock time spent in each phase of one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub position: Duration,
    pub perception: Duration,
    pub agents: Duration,
    pub network: Duration,
    pub metrics: Duration,
    pub total: Duration,
}

impl PhaseTimings {
    pub fn phase_sum(&self) -> Duration {
        self.position + self.perception + self.agents + self.network + self.metrics
    }
}

#[derive(Debug, Clone)]
pub struct TickResult {
    pub tick: Tick,
    /// In vehicle id order.
    pub records: Vec<MetricsRecord>,
    /// `metrics` is left at zero; the writer is outside the simulation.
    pub timings: PhaseTimings,
}

/// The type a vehicle gets when it spawns: a fixed assignment if present,
/// otherwise a draw from the weighted mix keyed only on `(seed, name)`.
pub fn assign_type<'a>(cfg: &'a ScenarioConfig, name: &str) -> &'a str {
    if let Some(t) = cfg.assign.get(name) {
        return t;
    }
    let total: f64 = cfg.mix.iter().map(|(_, w)| w).sum();
    let u = unit_interval(combine(&[cfg.seed, fnv1a(name.as_bytes())])) * total;
    let mut acc = 0.0;
    for (t, w) in &cfg.mix {
        acc += w;
        if u < acc {
            return t;
        }
    }
    &cfg.mix.last().expect("mix is validated non-empty").0
}

/// The world between ticks.
pub struct Simulation {
    cfg: ScenarioConfig,
    names: Vec<String>,
    vehicles: BTreeMap<VehicleId, Vehicle>,
    network: Network,
    next_station: u32,
    pool: rayon::ThreadPool,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, trace: &Trace) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| ScenarioError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Simulation {
            names: trace.names().to_vec(),
            vehicles: BTreeMap::new(),
            network: Network::new(cfg.comm_range)?,
            next_station: 0,
            pool,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.values()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.get(&id)
    }

    pub fn step(&mut self, frame: &TraceTick) -> Result<TickResult, ScenarioError> {
        let tick = frame.tick;
        let t0 = Instant::now();

        // positions
        let mut states = frame.states.clone();
        states.sort_by_key(|s| s.id);
        let alive: BTreeSet<VehicleId> = states.iter().map(|s| s.id).collect();
        self.vehicles.retain(|id, _| alive.contains(id));
        for s in &states {
            if self.vehicles.contains_key(&s.id) {
                continue;
            }
            let name = &self.names[s.id.0 as usize];
            let kind = assign_type(&self.cfg, name);
            let connected = self.cfg.types.get(kind).is_some_and(|t| t.spec.connected);
            let station = connected.then(|| {
                let st = StationId(self.next_station);
                self.next_station += 1;
                st
            });
            let v = build_vehicle(&self.cfg.types, kind, s.id, name, station)?;
            self.vehicles.insert(s.id, v);
        }
        let matches = MatchTable::build(self.vehicles.values().map(|v| (v.id, v.station)))?;
        let grid = GridIndex::rebuild(&states, self.cfg.cell_size)?;
        // perception looks much less far than the radio; a finer grid
        // scans far fewer vehicles per query
        let fine;
        let pgrid = if self.cfg.perception_radius < self.cfg.cell_size {
            fine = GridIndex::rebuild(&states, self.cfg.perception_radius)?;
            &fine
        } else {
            &grid
        };
        let t1 = Instant::now();

        let mut inboxes = self.network.step(tick);
        let t2 = Instant::now();

        // perception
        let (cfg, pool) = (&self.cfg, &self.pool);
        let wants: Vec<bool> = self.vehicles.values().map(|v| v.uses_perception()).collect();
        let perceived: Vec<Vec<PerceivedObject>> = pool.install(|| {
            states
                .par_iter()
                .zip(&wants)
                .map_init(Vec::new, |buf, (s, &want)| {
                    if !want {
                        return Ok(Vec::new());
                    }
                    buf.clear();
                    pgrid.for_each_nearby(s.id, cfg.perception_radius, |n| buf.push(*n))?;
                    Ok(perceive(s, buf, &cfg.perception, tick))
                })
                .collect::<Result<_, GridError>>()
        })?;
        let t3 = Instant::now();

        // agents
        let mut work: Vec<_> = self
            .vehicles
            .values_mut()
            .zip(&states)
            .zip(&perceived)
            .map(|((v, s), p)| {
                let inbox = v.station.and_then(|st| inboxes.remove(&st)).unwrap_or_default();
                (v, *s, p, inbox)
            })
            .collect();
        let seed = cfg.seed;
        let comm_range = cfg.comm_range;
        let outputs: Vec<_> = pool.install(|| {
            work.par_iter_mut()
                .map(|(v, state, perceived, inbox)| {
                    let env = VehicleEnv { tick, state: *state, perceived, matches: &matches, comm_range, seed };
                    v.tick(std::mem::take(inbox), &env)
                })
                .collect()
        });
        drop(work);
        let t4 = Instant::now();

        let radio = RadioMap { grid: &grid, matches: &matches };
        let mut records = Vec::with_capacity(outputs.len());
        for (v, out) in self.vehicles.values().zip(outputs) {
            if let Some(st) = v.station {
                for payload in out.broadcasts {
                    self.network.broadcast_encoded(radio, st, payload, tick)?;
                }
            }
            records.push(out.record);
        }
        let t5 = Instant::now();

        Ok(TickResult {
            tick,
            records,
            timings: PhaseTimings {
                position: t1 - t0,
                perception: t3 - t2,
                agents: t4 - t3,
                network: (t2 - t1) + (t5 - t4),
                metrics: Duration::ZERO,
                total: t5 - t0,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ticks: usize,
    pub vehicles_seen: usize,
    pub metrics: PathBuf,
    pub index: PathBuf,
    pub timings: PathBuf,
}

/// Loads the trace named in the config.
pub fn load_trace(src: &TraceSource) -> Result<Trace, ScenarioError> {
    let format = src.format.unwrap_or_else(|| TraceFormat::from_path(&src.path));
    Ok(trace::load(&src.path, format, src.options)?)
}

/// Runs `trace` under `cfg` and writes `metrics.jsonl`, `metrics.idx` and
/// `timings.csv` into `out`.
pub fn run(cfg: &ScenarioConfig, trace: &Trace, out: &Path) -> Result<RunSummary, ScenarioError> {
    let mut sim = Simulation::new(cfg.clone(), trace)?;
    let mut writer = MetricsWriter::create(out)?;
    let timings_path = out.join(TIMINGS_FILE);
    let mut timings = BufWriter::new(File::create(&timings_path)?);
    writeln!(timings, "{TIMINGS_HEADER}")?;

    let mut ticks = 0;
    let mut seen = BTreeSet::new();
    for frame in trace.ticks().iter().filter(|f| cfg.ticks.contains(f.tick)) {
        let mut res = sim.step(frame)?;
        let tm = Instant::now();
        writer.record_tick(res.tick, &res.records)?;
        res.timings.metrics = tm.elapsed();
        res.timings.total += res.timings.metrics;
        let t = &res.timings;
        writeln!(
            timings,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            res.tick,
            res.records.len(),
            t.position.as_secs_f64(),
            t.perception.as_secs_f64(),
            t.agents.as_secs_f64(),
            t.network.as_secs_f64(),
            t.metrics.as_secs_f64(),
            t.total.as_secs_f64(),
        )?;
        seen.extend(frame.states.iter().map(|s| s.id));
        ticks += 1;
    }
    writer.finish()?;
    timings.flush()?;
    Ok(RunSummary {
        ticks,
        vehicles_seen: seen.len(),
        metrics: out.join(crate::metrics::DATA_FILE),
        index: out.join(crate::metrics::INDEX_FILE),
        timings: timings_path,
    })
}

#[cfg(test)]
mod tests;
