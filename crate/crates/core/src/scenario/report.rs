//! CSV reports over a finished run directory.

use std::io::Write;
use std::path::Path;

use super::{ScenarioError, TIMINGS_FILE};
use crate::metrics::{avg_bandwidth, cpr, ttv_distribution, RunData};
use crate::trace::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    /// `tick,avg_bytes_sent`
    Bandwidth,
    /// `delay,count`
    Ttv,
    /// `cell_x,cell_y,ratio`
    Cpr,
    /// The per-tick phase timings.
    Timing,
}

impl std::str::FromStr for ReportKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bandwidth" => Ok(ReportKind::Bandwidth),
            "ttv" => Ok(ReportKind::Ttv),
            "cpr" => Ok(ReportKind::Cpr),
            "timing" => Ok(ReportKind::Timing),
            _ => Err(ScenarioError::Config(format!("unknown report kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Tick for ttv and cpr; the last recorded tick when absent.
    pub tick: Option<Tick>,
    /// Heatmap cell size in meters.
    pub cell: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { tick: None, cell: 100.0 }
    }
}

pub fn report<W: Write>(
    run_dir: &Path,
    kind: ReportKind,
    opts: ReportOptions,
    out: &mut W,
) -> Result<(), ScenarioError> {
    if kind == ReportKind::Timing {
        let text = std::fs::read_to_string(run_dir.join(TIMINGS_FILE))?;
        out.write_all(text.as_bytes())?;
        return Ok(());
    }
    let run = RunData::load(run_dir)?;
    let at = || -> Result<Tick, ScenarioError> {
        match opts.tick.or_else(|| run.ticks.last().map(|l| l.tick)) {
            Some(t) => Ok(t),
            None => Err(ScenarioError::Config("run has no ticks".into())),
        }
    };
    match kind {
        ReportKind::Bandwidth => {
            writeln!(out, "tick,avg_bytes_sent")?;
            for (t, b) in avg_bandwidth(&run) {
                writeln!(out, "{t},{b}")?;
            }
        }
        ReportKind::Ttv => {
            writeln!(out, "delay,count")?;
            if !run.ticks.is_empty() || opts.tick.is_some() {
                for (d, n) in ttv_distribution(&run, at()?)? {
                    writeln!(out, "{d},{n}")?;
                }
            }
        }
        ReportKind::Cpr => {
            writeln!(out, "cell_x,cell_y,ratio")?;
            if !run.ticks.is_empty() || opts.tick.is_some() {
                for ((x, y), r) in cpr(&run, at()?, opts.cell)? {
                    writeln!(out, "{x},{y},{r}")?;
                }
            }
        }
        ReportKind::Timing => unreachable!(),
    }
    Ok(())
}
