//! Scenario configuration file.
//!
//! ```toml
//! seed = 42
//! workers = 4
//! ticks = "0:600"            # half-open, optional
//! cell_size = 300.0
//! perception_radius = 100.0
//! comm_range = 300.0
//!
//! [trace]
//! path = "lust.xml"          # relative to this file
//! format = "fcd"             # fcd | csv, default from the extension
//! default_length = 5.0
//! default_width = 1.8
//!
//! [perception]
//! fov_half_angle_deg = 45.0
//! max_range = 100.0
//! max_plate_angle_deg = 60.0
//! plate_width = 0.52
//!
//! [[mix]]
//! type = "ConnectedVehicle"
//! weight = 0.9
//! [[mix]]
//! type = "SpamAttacker"
//! weight = 0.1
//!
//! [assign]                   # fixed types for named vehicles
//! "veh12" = "PoTVehicle"
//!
//! [vehicle_types.SpamAttacker]
//! params.spam = { k = 8 }
//!
//! [output]
//! dir = "runs/a"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ScenarioError;
use crate::perception::PerceptionConfig;
use crate::sandbox::TypeRegistry;
use crate::trace::{IngestOptions, Tick, TraceFormat};

/// Half-open range of trace ticks; `end = None` runs to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickRange {
    pub start: Tick,
    pub end: Option<Tick>,
}

impl TickRange {
    pub const ALL: TickRange = TickRange { start: 0, end: None };

    pub fn contains(&self, t: Tick) -> bool {
        t >= self.start && self.end.is_none_or(|e| t < e)
    }
}

impl std::str::FromStr for TickRange {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScenarioError::Config(format!("tick range must look like A:B, got `{s}`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let start = if a.trim().is_empty() { 0 } else { a.trim().parse().map_err(|_| bad())? };
        let end = if b.trim().is_empty() { None } else { Some(b.trim().parse().map_err(|_| bad())?) };
        if end.is_some_and(|e| e <= start) {
            return Err(ScenarioError::Config(format!("tick range `{s}` is empty")));
        }
        Ok(TickRange { start, end })
    }
}

#[derive(Debug, Clone)]
pub struct TraceSource {
    pub path: PathBuf,
    pub format: Option<TraceFormat>,
    pub options: IngestOptions,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub workers: usize,
    pub ticks: TickRange,
    pub cell_size: f64,
    pub perception_radius: f64,
    pub comm_range: f64,
    pub trace: Option<TraceSource>,
    pub perception: PerceptionConfig,
    /// Vehicle type and relative weight.
    pub mix: Vec<(String, f64)>,
    /// Vehicle name -> type, bypassing the mix.
    pub assign: BTreeMap<String, String>,
    pub types: TypeRegistry,
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            workers: 1,
            ticks: TickRange::ALL,
            cell_size: 300.0,
            perception_radius: 100.0,
            comm_range: 300.0,
            trace: None,
            perception: PerceptionConfig::default(),
            mix: vec![("ConnectedVehicle".into(), 1.0)],
            assign: BTreeMap::new(),
            types: TypeRegistry::builtin(),
            output_dir: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    workers: Option<usize>,
    ticks: Option<String>,
    cell_size: Option<f64>,
    perception_radius: Option<f64>,
    comm_range: Option<f64>,
    trace: Option<RawTrace>,
    perception: Option<RawPerception>,
    #[serde(default)]
    mix: Vec<RawMix>,
    #[serde(default)]
    assign: BTreeMap<String, String>,
    #[serde(default)]
    vehicle_types: toml::Table,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    path: PathBuf,
    format: Option<String>,
    default_length: Option<f64>,
    default_width: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerception {
    fov_half_angle_deg: Option<f64>,
    max_range: Option<f64>,
    max_plate_angle_deg: Option<f64>,
    plate_width: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMix {
    #[serde(rename = "type")]
    vehicle_type: String,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: PathBuf,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        let mut cfg = ScenarioConfig::default();
        let d = ScenarioConfig::default();
        cfg.seed = raw.seed.unwrap_or(d.seed);
        cfg.workers = raw.workers.unwrap_or(d.workers);
        if let Some(t) = raw.ticks {
            cfg.ticks = t.parse()?;
        }
        cfg.cell_size = raw.cell_size.unwrap_or(d.cell_size);
        cfg.perception_radius = raw.perception_radius.unwrap_or(d.perception_radius);
        cfg.comm_range = raw.comm_range.unwrap_or(d.comm_range);
        if let Some(t) = raw.trace {
            let defaults = IngestOptions::default();
            cfg.trace = Some(TraceSource {
                path: base.join(t.path),
                format: t.format.as_deref().map(TraceFormat::parse).transpose()?,
                options: IngestOptions {
                    default_length: t.default_length.unwrap_or(defaults.default_length),
                    default_width: t.default_width.unwrap_or(defaults.default_width),
                },
            });
        }
        if let Some(p) = raw.perception {
            let d = d.perception;
            cfg.perception = PerceptionConfig {
                fov_half_angle: p.fov_half_angle_deg.map_or(d.fov_half_angle, f64::to_radians),
                max_range: p.max_range.unwrap_or(d.max_range),
                max_plate_angle: p.max_plate_angle_deg.map_or(d.max_plate_angle, f64::to_radians),
                plate_width: p.plate_width.unwrap_or(d.plate_width),
            };
        }
        if !raw.mix.is_empty() {
            cfg.mix = raw.mix.into_iter().map(|m| (m.vehicle_type, m.weight)).collect();
        }
        cfg.assign = raw.assign;
        cfg.types.load_table(&raw.vehicle_types)?;
        cfg.output_dir = raw.output.map(|o| base.join(o.dir));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Config(m));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.workers == 0 {
            return err("workers must be at least 1".into());
        }
        for (name, v) in [
            ("cell_size", self.cell_size),
            ("perception_radius", self.perception_radius),
            ("comm_range", self.comm_range),
        ] {
            if !positive(v) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.perception_radius > self.cell_size || self.comm_range > self.cell_size {
            return err(format!(
                "perception_radius ({}) and comm_range ({}) must not exceed cell_size ({})",
                self.perception_radius, self.comm_range, self.cell_size
            ));
        }
        if self.ticks.end.is_some_and(|e| e <= self.ticks.start) {
            return err("tick range is empty".into());
        }
        self.perception.validate()?;
        if self.mix.is_empty() {
            return err("vehicle mix is empty".into());
        }
        for (t, w) in &self.mix {
            if !positive(*w) {
                return err(format!("weight of `{t}` must be positive, got {w}"));
            }
        }
        for t in self.mix.iter().map(|(t, _)| t).chain(self.assign.values()) {
            if self.types.get(t).is_none() {
                return err(format!("unknown vehicle type `{t}`"));
            }
        }
        Ok(())
    }
}
