//! Python bindings. Vehicle ids are the trace's interned ids; `Trace.names`
//! and `Trace.id_of` map them to and from names.

use std::path::PathBuf;
use std::sync::Mutex;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use obusim_core::cpm::{Cpm, PerceivedObject, StationId};
use obusim_core::geometry::Pose;
use obusim_core::metrics::MetricsRecord;
use obusim_core::scenario::{self, ReportKind, ReportOptions, ScenarioConfig, TickRange};
use obusim_core::trace::{self, IngestOptions, TraceFormat, VehicleId};
use obusim_core::{grid, perception};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Position and footprint of one vehicle. Heading in radians, 0 = +x.
#[pyclass(module = "obusim", from_py_object)]
#[derive(Clone, Copy)]
struct VehicleState {
    #[pyo3(get, set)]
    id: u32,
    #[pyo3(get, set)]
    x: f64,
    #[pyo3(get, set)]
    y: f64,
    #[pyo3(get, set)]
    heading: f64,
    #[pyo3(get, set)]
    length: f64,
    #[pyo3(get, set)]
    width: f64,
}

impl From<trace::VehicleState> for VehicleState {
    fn from(s: trace::VehicleState) -> Self {
        VehicleState { id: s.id.0, x: s.x, y: s.y, heading: s.heading, length: s.length, width: s.width }
    }
}

impl From<VehicleState> for trace::VehicleState {
    fn from(s: VehicleState) -> Self {
        trace::VehicleState {
            id: VehicleId(s.id),
            x: s.x,
            y: s.y,
            heading: s.heading,
            length: s.length,
            width: s.width,
        }
    }
}

#[pymethods]
impl VehicleState {
    #[new]
    #[pyo3(signature = (id, x, y, heading=0.0, length=5.0, width=1.8))]
    fn new(id: u32, x: f64, y: f64, heading: f64, length: f64, width: f64) -> Self {
        VehicleState { id, x, y, heading, length, width }
    }

    fn __repr__(&self) -> String {
        format!(
            "VehicleState(id={}, x={}, y={}, heading={}, length={}, width={})",
            self.id, self.x, self.y, self.heading, self.length, self.width
        )
    }
}

#[pyclass(module = "obusim", from_py_object)]
#[derive(Clone, Copy)]
struct PerceptionConfig {
    inner: perception::PerceptionConfig,
}

#[pymethods]
impl PerceptionConfig {
    #[new]
    #[pyo3(signature = (fov_half_angle_deg=45.0, max_range=100.0, max_plate_angle_deg=60.0, plate_width=0.52))]
    fn new(fov_half_angle_deg: f64, max_range: f64, max_plate_angle_deg: f64, plate_width: f64) -> PyResult<Self> {
        let inner = perception::PerceptionConfig {
            fov_half_angle: fov_half_angle_deg.to_radians(),
            max_range,
            max_plate_angle: max_plate_angle_deg.to_radians(),
            plate_width,
        };
        inner.validate().map_err(value_err)?;
        Ok(PerceptionConfig { inner })
    }

    #[getter]
    fn fov_half_angle_deg(&self) -> f64 {
        self.inner.fov_half_angle.to_degrees()
    }

    #[getter]
    fn max_range(&self) -> f64 {
        self.inner.max_range
    }

    #[getter]
    fn max_plate_angle_deg(&self) -> f64 {
        self.inner.max_plate_angle.to_degrees()
    }

    #[getter]
    fn plate_width(&self) -> f64 {
        self.inner.plate_width
    }
}

fn object_dict<'py>(py: Python<'py>, o: &PerceivedObject) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("plate", o.plate.0)?;
    d.set_item("x", o.x)?;
    d.set_item("y", o.y)?;
    d.set_item("heading", o.heading)?;
    d.set_item("observed_tick", o.observed_tick)?;
    Ok(d)
}

/// Plates the ego camera can read, nearest first, as dicts with keys
/// plate, x, y, heading, observed_tick.
#[pyfunction]
#[pyo3(signature = (ego, neighbors, config=None, tick=0))]
fn perceive<'py>(
    py: Python<'py>,
    ego: VehicleState,
    neighbors: Vec<VehicleState>,
    config: Option<PerceptionConfig>,
    tick: u32,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let others: Vec<trace::VehicleState> = neighbors.into_iter().map(Into::into).collect();
    perception::perceive(&ego.into(), &others, &cfg, tick).iter().map(|o| object_dict(py, o)).collect()
}

#[pyclass(module = "obusim")]
struct GridIndex {
    inner: grid::GridIndex,
}

#[pymethods]
impl GridIndex {
    #[new]
    fn new(states: Vec<VehicleState>, cell_size: f64) -> PyResult<Self> {
        let states: Vec<trace::VehicleState> = states.into_iter().map(Into::into).collect();
        Ok(GridIndex { inner: grid::GridIndex::rebuild(&states, cell_size).map_err(value_err)? })
    }

    /// Ids within `radius` of `ego`, ascending; `radius` may not exceed the
    /// cell size.
    fn nearby(&self, ego: u32, radius: f64) -> PyResult<Vec<u32>> {
        let mut ids: Vec<u32> =
            self.inner.get_nearby_vehicles(VehicleId(ego), radius).map_err(value_err)?.iter().map(|s| s.id.0).collect();
        ids.sort_unstable();
        Ok(ids)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn cell_size(&self) -> f64 {
        self.inner.cell_size()
    }
}

#[pyclass(module = "obusim")]
struct Trace {
    inner: trace::Trace,
}

#[pymethods]
impl Trace {
    /// Loads FCD XML or CSV; the format follows the extension unless given.
    #[staticmethod]
    #[pyo3(signature = (path, format=None, default_length=5.0, default_width=1.8))]
    fn load(path: PathBuf, format: Option<&str>, default_length: f64, default_width: f64) -> PyResult<Self> {
        let format = match format {
            Some(f) => TraceFormat::parse(f).map_err(value_err)?,
            None => TraceFormat::from_path(&path),
        };
        let opts = IngestOptions { default_length, default_width };
        Ok(Trace { inner: trace::load(&path, format, opts).map_err(value_err)? })
    }

    #[staticmethod]
    fn synth(seed: u64, vehicles: usize, ticks: usize, area: f64) -> Self {
        Trace { inner: trace::synth_traffic(seed, vehicles, ticks, area) }
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(runtime_err)?;
        trace::write_csv(&self.inner, std::io::BufWriter::new(f)).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Vehicle names, indexed by id.
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    fn id_of(&self, name: &str) -> PyResult<u32> {
        self.inner.id_of(name).map(|v| v.0).ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    /// `(tick, states)` pairs in tick order.
    fn ticks(&self) -> Vec<(u32, Vec<VehicleState>)> {
        self.inner.ticks().iter().map(|t| (t.tick, t.states.iter().map(|&s| s.into()).collect())).collect()
    }
}

/// Encodes a CPM. `pose` is `(x, y, heading)`, each object
/// `(plate, x, y, heading, observed_tick)`.
#[pyfunction]
fn encode_cpm<'py>(
    py: Python<'py>,
    station: u32,
    tick: u32,
    pose: (f64, f64, f64),
    objects: Vec<(u32, f64, f64, f64, u32)>,
) -> PyResult<Bound<'py, PyBytes>> {
    let mut cpm = Cpm::new(StationId(station), tick, Pose::new(pose.0, pose.1, pose.2));
    cpm.objects = objects
        .into_iter()
        .map(|(p, x, y, heading, t)| PerceivedObject { plate: VehicleId(p), x, y, heading, observed_tick: t })
        .collect();
    Ok(PyBytes::new(py, &cpm.encode().map_err(value_err)?))
}

#[pyfunction]
fn decode_cpm<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let cpm = Cpm::decode(data).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("station", cpm.sender_station.0)?;
    d.set_item("tick", cpm.gen_tick)?;
    d.set_item("pose", (cpm.sender_pose.x, cpm.sender_pose.y, cpm.sender_pose.heading))?;
    let objects: Vec<_> = cpm.objects.iter().map(|o| object_dict(py, o)).collect::<PyResult<_>>()?;
    d.set_item("objects", objects)?;
    Ok(d)
}

fn record_dict<'py>(py: Python<'py>, r: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("id", &r.id)?;
    d.set_item("type", &r.vehicle_type)?;
    d.set_item("x", r.x)?;
    d.set_item("y", r.y)?;
    d.set_item("bytes_sent", r.bytes_sent)?;
    d.set_item("local_objects", r.local_objects)?;
    d.set_item("received_objects", r.received_objects)?;
    d.set_item("all_objects", r.all_objects)?;
    d.set_item("ttv", r.ttv.clone())?;
    d.set_item("errors", r.errors)?;
    Ok(d)
}

fn build_config(
    config: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    ticks: Option<&str>,
    mix: Option<Vec<(String, f64)>>,
) -> PyResult<ScenarioConfig> {
    let mut cfg = match config {
        Some(p) => ScenarioConfig::load(&p).map_err(value_err)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(t) = ticks {
        cfg.ticks = t.parse::<TickRange>().map_err(value_err)?;
    }
    if let Some(m) = mix {
        cfg.mix = m;
    }
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Tick-by-tick driver over a loaded trace.
#[pyclass(module = "obusim")]
struct Simulation {
    sim: Mutex<scenario::Simulation>,
    frames: Vec<trace::TraceTick>,
    next: Mutex<usize>,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (trace, config=None, seed=None, workers=None, mix=None))]
    fn new(
        trace: &Trace,
        config: Option<PathBuf>,
        seed: Option<u64>,
        workers: Option<usize>,
        mix: Option<Vec<(String, f64)>>,
    ) -> PyResult<Self> {
        let cfg = build_config(config, seed, workers, None, mix)?;
        let frames = trace.inner.ticks().iter().filter(|f| cfg.ticks.contains(f.tick)).cloned().collect();
        let sim = scenario::Simulation::new(cfg, &trace.inner).map_err(value_err)?;
        Ok(Simulation { sim: Mutex::new(sim), frames, next: Mutex::new(0) })
    }

    /// Runs the next trace tick and returns `(tick, records)`, or None when
    /// the trace is exhausted.
    fn step<'py>(&self, py: Python<'py>) -> PyResult<Option<(u32, Vec<Bound<'py, PyDict>>)>> {
        let mut next = self.next.lock().map_err(runtime_err)?;
        let Some(frame) = self.frames.get(*next) else {
            return Ok(None);
        };
        let mut sim = self.sim.lock().map_err(runtime_err)?;
        let res = sim.step(frame).map_err(runtime_err)?;
        *next += 1;
        let records = res.records.iter().map(|r| record_dict(py, r)).collect::<PyResult<_>>()?;
        Ok(Some((res.tick, records)))
    }

    fn vehicle_types(&self) -> PyResult<Vec<(String, String)>> {
        let sim = self.sim.lock().map_err(runtime_err)?;
        Ok(sim.vehicles().map(|v| (v.name.clone(), v.type_name().to_string())).collect())
    }
}

/// Runs a whole scenario and writes metrics, index and timings into `out`.
/// The trace comes from the argument, else from the config file.
#[pyfunction]
#[pyo3(signature = (out, trace=None, config=None, seed=None, workers=None, ticks=None, mix=None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    out: PathBuf,
    trace: Option<&Trace>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    ticks: Option<&str>,
    mix: Option<Vec<(String, f64)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = build_config(config, seed, workers, ticks, mix)?;
    std::fs::create_dir_all(&out).map_err(runtime_err)?;
    let loaded;
    let tr = match (trace, &cfg.trace) {
        (Some(t), _) => &t.inner,
        (None, Some(src)) => {
            loaded = scenario::load_trace(src).map_err(value_err)?;
            &loaded
        }
        (None, None) => return Err(PyValueError::new_err("no trace given and the config names none")),
    };
    let summary = py.detach(|| scenario::run(&cfg, tr, &out)).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("ticks", summary.ticks)?;
    d.set_item("vehicles_seen", summary.vehicles_seen)?;
    d.set_item("metrics", summary.metrics)?;
    d.set_item("index", summary.index)?;
    d.set_item("timings", summary.timings)?;
    Ok(d)
}

/// CSV text of one report kind: bandwidth, ttv, cpr or timing.
#[pyfunction]
#[pyo3(signature = (run_dir, kind, tick=None, cell=100.0))]
fn report(run_dir: PathBuf, kind: &str, tick: Option<u32>, cell: f64) -> PyResult<String> {
    let kind: ReportKind = kind.parse().map_err(value_err)?;
    let mut buf = Vec::new();
    scenario::report(&run_dir, kind, ReportOptions { tick, cell }, &mut buf).map_err(value_err)?;
    String::from_utf8(buf).map_err(runtime_err)
}

#[pymodule]
fn obusim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<VehicleState>()?;
    m.add_class::<PerceptionConfig>()?;
    m.add_class::<GridIndex>()?;
    m.add_class::<Trace>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(perceive, m)?)?;
    m.add_function(wrap_pyfunction!(encode_cpm, m)?)?;
    m.add_function(wrap_pyfunction!(decode_cpm, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
