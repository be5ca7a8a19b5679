//! Mobility trace ingestion.
//!
//! Traces are read from SUMO-style floating-car-data XML or from a flat CSV
//! schema, and can be synthesized for tests and benchmarks. Vehicle names are
//! interned into dense [`VehicleId`]s in order of first appearance, which
//! makes every downstream ordering a pure function of the input file.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Point, Pose};

/// Simulation time in whole seconds.
pub type Tick = u32;

/// Interned vehicle identifier. Doubles as the vehicle's numberplate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ground-truth state of one vehicle at one tick. `(x, y)` is the center of
/// the front bumper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTick {
    pub tick: Tick,
    /// Sorted by vehicle id; ids are unique.
    pub states: Vec<VehicleState>,
}

/// A parsed trace: the vehicle name table plus the tick sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    names: Vec<String>,
    ticks: Vec<TraceTick>,
}

impl Trace {
    pub fn ticks(&self) -> &[TraceTick] {
        &self.ticks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: VehicleId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<VehicleId> {
        self.names.iter().position(|n| n == name).map(|i| VehicleId(i as u32))
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown trace format `{0}` (expected `fcd` or `csv`)")]
    UnknownFormat(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dimensions used when a trace does not carry them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub default_length: f64,
    pub default_width: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { default_length: 5.0, default_width: 1.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Fcd,
    Csv,
}

impl TraceFormat {
    pub fn parse(s: &str) -> Result<Self, TraceError> {
        match s.to_ascii_lowercase().as_str() {
            "fcd" | "xml" => Ok(TraceFormat::Fcd),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(TraceError::UnknownFormat(other.to_string())),
        }
    }

    /// Guess from the file extension; anything that is not `.csv` is FCD.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TraceFormat::Csv,
            _ => TraceFormat::Fcd,
        }
    }
}

pub fn load(path: &Path, format: TraceFormat, opts: IngestOptions) -> Result<Trace, TraceError> {
    let file = BufReader::new(File::open(path)?);
    match format {
        TraceFormat::Fcd => parse_fcd(file, opts),
        TraceFormat::Csv => parse_csv(file, opts),
    }
}

/// What to do when a vehicle shows up twice in the same tick.
#[derive(Clone, Copy, PartialEq)]
enum Duplicate {
    Reject,
    KeepFirst,
}

#[derive(Default)]
struct TraceBuilder {
    names: Vec<String>,
    index: HashMap<String, VehicleId>,
    ticks: Vec<TraceTick>,
    in_tick: HashSet<VehicleId>,
}

struct Sample<'a> {
    name: &'a str,
    x: f64,
    y: f64,
    heading: f64,
    length: f64,
    width: f64,
}

impl TraceBuilder {
    fn begin_tick(&mut self, tick: Tick) {
        if self.ticks.last().map(|t| t.tick) != Some(tick) {
            self.ticks.push(TraceTick { tick, states: Vec::new() });
            self.in_tick.clear();
        }
    }

    fn add(&mut self, s: Sample<'_>, dup: Duplicate, line: usize) -> Result<(), TraceError> {
        for (label, v) in [("x", s.x), ("y", s.y), ("heading", s.heading)] {
            if !v.is_finite() {
                return Err(TraceError::Validation(format!(
                    "line {line}: non-finite {label} for vehicle `{}`",
                    s.name
                )));
            }
        }
        if !(s.length > 0.0 && s.length.is_finite() && s.width > 0.0 && s.width.is_finite()) {
            return Err(TraceError::Validation(format!(
                "line {line}: vehicle `{}` needs positive length and width",
                s.name
            )));
        }
        let id = match self.index.get(s.name) {
            Some(&id) => id,
            None => {
                let id = VehicleId(self.names.len() as u32);
                self.names.push(s.name.to_string());
                self.index.insert(s.name.to_string(), id);
                id
            }
        };
        if !self.in_tick.insert(id) {
            return match dup {
                Duplicate::KeepFirst => Ok(()),
                Duplicate::Reject => {
                    Err(TraceError::Validation(format!("line {line}: vehicle `{}` appears twice in one tick", s.name)))
                }
            };
        }
        let tick = self.ticks.last_mut().expect("begin_tick called first");
        tick.states.push(VehicleState {
            id,
            x: s.x,
            y: s.y,
            heading: normalize_angle(s.heading),
            length: s.length,
            width: s.width,
        });
        Ok(())
    }

    fn finish(mut self) -> Trace {
        for t in &mut self.ticks {
            t.states.sort_by_key(|s| s.id);
        }
        Trace { names: self.names, ticks: self.ticks }
    }
}

fn line_of(text: &str, pos: usize) -> usize {
    let end = pos.min(text.len());
    text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Converts the FCD angle convention (degrees, clockwise from north) to
/// radians counterclockwise from east.
pub fn fcd_angle_to_heading(angle_deg: f64) -> f64 {
    normalize_angle((90.0 - angle_deg) * PI / 180.0)
}

fn attrs(e: &BytesStart<'_>, line: usize) -> Result<HashMap<String, String>, TraceError> {
    let mut out = HashMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| TraceError::Parse { line, message: err.to_string() })?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value =
            a.unescape_value().map_err(|err| TraceError::Parse { line, message: err.to_string() })?.into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn num_attr(map: &HashMap<String, String>, key: &str, element: &str, line: usize) -> Result<f64, TraceError> {
    let raw = map
        .get(key)
        .ok_or_else(|| TraceError::Parse { line, message: format!("<{element}> missing `{key}` attribute") })?;
    raw.trim().parse::<f64>().map_err(|_| TraceError::Parse {
        line,
        message: format!("<{element}> attribute `{key}` is not a number: `{raw}`"),
    })
}

fn opt_num_attr(
    map: &HashMap<String, String>,
    key: &str,
    element: &str,
    line: usize,
) -> Result<Option<f64>, TraceError> {
    if map.contains_key(key) {
        num_attr(map, key, element, line).map(Some)
    } else {
        Ok(None)
    }
}

/// Parses floating-car-data XML: `<timestep time=..>` elements containing
/// `<vehicle id x y angle [length] [width]/>` elements.
///
/// Fractional timestamps are floored into integer ticks; when several
/// timesteps share a tick the first sample of each vehicle wins.
pub fn parse_fcd<R: Read>(mut stream: R, opts: IngestOptions) -> Result<Trace, TraceError> {
    let mut text = String::new();
    stream.read_to_string(&mut text)?;

    let mut reader = quick_xml::Reader::from_str(&text);
    reader.config_mut().trim_text(true);

    let mut builder = TraceBuilder::default();
    let mut last_time: Option<f64> = None;
    let mut in_timestep = false;

    loop {
        let event = reader.read_event().map_err(|err| TraceError::Parse {
            line: line_of(&text, reader.error_position() as usize),
            message: err.to_string(),
        })?;
        // line of the tag's closing '>'
        let line = line_of(&text, (reader.buffer_position() as usize).saturating_sub(1));
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                match e.name().as_ref() {
                    b"timestep" => {
                        if in_timestep {
                            return Err(TraceError::Parse { line, message: "nested <timestep>".into() });
                        }
                        let map = attrs(e, line)?;
                        let time = num_attr(&map, "time", "timestep", line)?;
                        if !time.is_finite() || time < 0.0 {
                            return Err(TraceError::Validation(format!(
                                "line {line}: timestep time must be a non-negative number, got {time}"
                            )));
                        }
                        if let Some(prev) = last_time {
                            if time <= prev {
                                return Err(TraceError::Validation(format!(
                                    "line {line}: non-monotonic timestamp {time} after {prev}"
                                )));
                            }
                        }
                        last_time = Some(time);
                        if time.floor() > Tick::MAX as f64 {
                            return Err(TraceError::Validation(format!("line {line}: time {time} out of range")));
                        }
                        builder.begin_tick(time.floor() as Tick);
                        in_timestep = !is_empty;
                    }
                    b"vehicle" => {
                        if !in_timestep {
                            return Err(TraceError::Parse { line, message: "<vehicle> outside of <timestep>".into() });
                        }
                        let map = attrs(e, line)?;
                        let name = map.get("id").ok_or_else(|| TraceError::Parse {
                            line,
                            message: "<vehicle> missing `id` attribute".into(),
                        })?;
                        let x = num_attr(&map, "x", "vehicle", line)?;
                        let y = num_attr(&map, "y", "vehicle", line)?;
                        let angle = num_attr(&map, "angle", "vehicle", line)?;
                        let length = opt_num_attr(&map, "length", "vehicle", line)?.unwrap_or(opts.default_length);
                        let width = opt_num_attr(&map, "width", "vehicle", line)?.unwrap_or(opts.default_width);
                        builder.add(
                            Sample { name, x, y, heading: fcd_angle_to_heading(angle), length, width },
                            Duplicate::KeepFirst,
                            line,
                        )?;
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => {
                if e.name().as_ref() == b"timestep" {
                    in_timestep = false;
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(builder.finish())
}

const CSV_COLUMNS: [&str; 7] = ["tick", "id", "x", "y", "heading", "length", "width"];

/// Parses the flat CSV schema `tick,id,x,y,heading,length,width` (heading in
/// radians). Rows must be grouped by non-decreasing tick. Empty length or
/// width cells fall back to the configured defaults.
pub fn parse_csv<R: Read>(stream: R, opts: IngestOptions) -> Result<Trace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(stream);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 7];
    for (slot, name) in col.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| TraceError::MissingColumn(name.to_string()))?;
    }

    let mut builder = TraceBuilder::default();
    let mut last_tick: Option<Tick> = None;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(col[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64, TraceError> {
            field(i).parse::<f64>().map_err(|_| TraceError::Parse {
                line,
                message: format!("column `{}` is not a number: `{}`", CSV_COLUMNS[i], field(i)),
            })
        };
        let dim = |i: usize, default: f64| -> Result<f64, TraceError> {
            if field(i).is_empty() {
                Ok(default)
            } else {
                num(i)
            }
        };
        let tick: Tick = field(0).parse().map_err(|_| TraceError::Parse {
            line,
            message: format!("column `tick` is not a non-negative integer: `{}`", field(0)),
        })?;
        if let Some(prev) = last_tick {
            if tick < prev {
                return Err(TraceError::Validation(format!("line {line}: non-monotonic tick {tick} after {prev}")));
            }
        }
        last_tick = Some(tick);
        builder.begin_tick(tick);
        builder.add(
            Sample {
                name: field(1),
                x: num(2)?,
                y: num(3)?,
                heading: num(4)?,
                length: dim(5, opts.default_length)?,
                width: dim(6, opts.default_width)?,
            },
            Duplicate::Reject,
            line,
        )?;
    }
    Ok(builder.finish())
}

/// Writes a trace in the CSV schema. Floats use shortest round-trip
/// formatting, so `parse_csv(write_csv(t)) == t`. Ticks without vehicles
/// cannot be represented and are dropped.
pub fn write_csv<W: Write>(trace: &Trace, out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for t in &trace.ticks {
        for s in &t.states {
            w.write_record(&[
                t.tick.to_string(),
                trace.name(s.id).to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.heading.to_string(),
                s.length.to_string(),
                s.width.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

const ROAD_SPACING: f64 = 100.0;
const LANE_OFFSET: f64 = 1.75;

/// Deterministic synthetic traffic on a Manhattan road grid inside a square
/// of side `area` meters. Each vehicle drives a straight lane at constant
/// speed and wraps around at the square's edges.
pub fn synth_traffic(seed: u64, n_vehicles: usize, n_ticks: usize, area: f64) -> Trace {
    let area = if area.is_finite() && area >= 1.0 { area } else { 1.0 };
    let spacing = ROAD_SPACING.min(area);
    let n_roads = ((area / spacing).floor() as u64).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    struct Lane {
        vertical: bool,
        forward: bool,
        offset: f64,
        start: f64,
        speed: f64,
    }

    let lanes: Vec<Lane> = (0..n_vehicles)
        .map(|_| {
            let vertical = rng.random_bool(0.5);
            let forward = rng.random_bool(0.5);
            let road = rng.random_range(0..n_roads) as f64 * spacing + spacing / 2.0;
            // Right-hand traffic: each direction keeps to its own side.
            let side = if forward ^ vertical { LANE_OFFSET } else { -LANE_OFFSET };
            Lane {
                vertical,
                forward,
                offset: road + side,
                start: rng.random_range(0.0..area),
                speed: rng.random_range(5.0..20.0),
            }
        })
        .collect();

    let names = (0..n_vehicles).map(|i| format!("v{i}")).collect();
    let opts = IngestOptions::default();
    let ticks = (0..n_ticks)
        .map(|t| {
            let states = lanes
                .iter()
                .enumerate()
                .map(|(i, lane)| {
                    let dir = if lane.forward { 1.0 } else { -1.0 };
                    let along = (lane.start + dir * lane.speed * t as f64).rem_euclid(area);
                    let (x, y, heading) = match (lane.vertical, lane.forward) {
                        (false, true) => (along, lane.offset, 0.0),
                        (false, false) => (along, lane.offset, PI),
                        (true, true) => (lane.offset, along, PI / 2.0),
                        (true, false) => (lane.offset, along, -PI / 2.0),
                    };
                    VehicleState {
                        id: VehicleId(i as u32),
                        x,
                        y,
                        heading,
                        length: opts.default_length,
                        width: opts.default_width,
                    }
                })
                .collect();
            TraceTick { tick: t as Tick, states }
        })
        .collect();
    Trace { names, ticks }
}

/// Builds a trace from explicit `(tick, name, pose)` samples. Handy for
/// hand-stepped scenarios.
pub fn from_samples<'a, I>(samples: I, opts: IngestOptions) -> Result<Trace, TraceError>
where
    I: IntoIterator<Item = (Tick, &'a str, Pose)>,
{
    let mut builder = TraceBuilder::default();
    let mut last: Option<Tick> = None;
    for (i, (tick, name, pose)) in samples.into_iter().enumerate() {
        if last.is_some_and(|p| tick < p) {
            return Err(TraceError::Validation(format!("sample {i}: non-monotonic tick {tick}")));
        }
        last = Some(tick);
        builder.begin_tick(tick);
        builder.add(
            Sample {
                name,
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                length: opts.default_length,
                width: opts.default_width,
            },
            Duplicate::Reject,
            i + 1,
        )?;
    }
    Ok(builder.finish())
}
