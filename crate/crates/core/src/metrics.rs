//! Per-tick metrics: JSON-lines storage with a byte-offset index, and the
//! aggregates computed from it.
//!
//! `metrics.jsonl` holds one line per tick, `{"tick":T,"vehicles":[...]}`,
//! with vehicle records sorted by trace order and keys in this order:
//! `id, type, x, y, bytes_sent, local_objects, received_objects,
//! all_objects, ttv, errors`. `metrics.idx` holds one `tick offset length`
//! line per JSON line; `length` excludes the newline.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Tick;

pub const DATA_FILE: &str = "metrics.jsonl";
pub const INDEX_FILE: &str = "metrics.idx";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics I/O: {0}")]
    Io(#[from] io::Error),
    #[error("malformed metrics line: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tick {0} not found")]
    NotFound(Tick),
    #[error("tick {tick} recorded after tick {last}")]
    OutOfOrder { tick: Tick, last: Tick },
    #[error("malformed index line {line}: {message}")]
    BadIndex { line: usize, message: String },
    #[error("cell size must be positive and finite, got {0}")]
    BadCell(f64),
}

/// One vehicle's state at the end of a tick. Object counts and the TTV
/// histogram are cumulative, `bytes_sent` is for this tick only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub vehicle_type: String,
    pub x: f64,
    pub y: f64,
    pub bytes_sent: u64,
    pub local_objects: u64,
    pub received_objects: u64,
    pub all_objects: u64,
    /// Delay in ticks -> number of verifications.
    pub ttv: BTreeMap<u32, u64>,
    pub errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLine {
    pub tick: Tick,
    pub vehicles: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub tick: Tick,
    pub offset: u64,
    pub length: u64,
}

/// Single writer for a run's metrics files.
pub struct MetricsWriter<D: Write, I: Write> {
    data: D,
    index: I,
    offset: u64,
    last: Option<Tick>,
    buf: Vec<u8>,
}

impl MetricsWriter<BufWriter<File>, BufWriter<File>> {
    pub fn create(dir: &Path) -> Result<Self, MetricsError> {
        std::fs::create_dir_all(dir)?;
        let data = BufWriter::new(File::create(dir.join(DATA_FILE))?);
        let index = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
        Ok(MetricsWriter::new(data, index))
    }
}

impl<D: Write, I: Write> MetricsWriter<D, I> {
    pub fn new(data: D, index: I) -> Self {
        MetricsWriter { data, index, offset: 0, last: None, buf: Vec::new() }
    }

    pub fn record_tick(&mut self, tick: Tick, records: &[MetricsRecord]) -> Result<IndexEntry, MetricsError> {
        if let Some(last) = self.last {
            if tick <= last {
                return Err(MetricsError::OutOfOrder { tick, last });
            }
        }
        #[derive(Serialize)]
        struct Line<'a> {
            tick: Tick,
            vehicles: &'a [MetricsRecord],
        }
        self.buf.clear();
        serde_json::to_writer(&mut self.buf, &Line { tick, vehicles: records })?;
        let entry = IndexEntry { tick, offset: self.offset, length: self.buf.len() as u64 };
        self.buf.push(b'\n');
        self.data.write_all(&self.buf)?;
        writeln!(self.index, "{} {} {}", entry.tick, entry.offset, entry.length)?;
        self.offset += self.buf.len() as u64;
        self.last = Some(tick);
        Ok(entry)
    }

    pub fn finish(mut self) -> Result<(D, I), MetricsError> {
        self.data.flush()?;
        self.index.flush()?;
        Ok((self.data, self.index))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsIndex {
    entries: Vec<IndexEntry>,
}

impl MetricsIndex {
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, MetricsError> {
        let mut entries: Vec<IndexEntry> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| MetricsError::BadIndex { line: i + 1, message };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [t, o, l] = parts[..] else {
                return Err(bad(format!("expected 3 fields, got {}", parts.len())));
            };
            let num = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
            let tick = Tick::try_from(num(t)?).map_err(|e| bad(e.to_string()))?;
            let entry = IndexEntry { tick, offset: num(o)?, length: num(l)? };
            if let Some(prev) = entries.last() {
                if entry.tick <= prev.tick || entry.offset <= prev.offset {
                    return Err(bad("ticks and offsets must increase".into()));
                }
            }
            entries.push(entry);
        }
        Ok(MetricsIndex { entries })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, tick: Tick) -> Option<IndexEntry> {
        self.entries.binary_search_by_key(&tick, |e| e.tick).ok().map(|i| self.entries[i])
    }
}

/// Reads exactly the indexed line for `tick`.
pub fn seek<R: Read + Seek>(index: &MetricsIndex, data: &mut R, tick: Tick) -> Result<TickLine, MetricsError> {
    let e = index.get(tick).ok_or(MetricsError::NotFound(tick))?;
    data.seek(SeekFrom::Start(e.offset))?;
    let mut buf = vec![0; e.length as usize];
    data.read_exact(&mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

/// Reference lookup without the index.
pub fn linear_scan<R: BufRead>(data: R, tick: Tick) -> Result<TickLine, MetricsError> {
    for line in data.lines() {
        let line: TickLine = serde_json::from_str(&line?)?;
        if line.tick == tick {
            return Ok(line);
        }
    }
    Err(MetricsError::NotFound(tick))
}

/// A whole run, loaded in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunData {
    pub ticks: Vec<TickLine>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self, MetricsError> {
        Self::parse(BufReader::new(File::open(dir.join(DATA_FILE))?))
    }

    pub fn parse<R: BufRead>(data: R) -> Result<Self, MetricsError> {
        let mut ticks = Vec::new();
        for line in data.lines() {
            let line = line?;
            if !line.is_empty() {
                ticks.push(serde_json::from_str(&line)?);
            }
        }
        Ok(RunData { ticks })
    }

    pub fn tick(&self, tick: Tick) -> Result<&TickLine, MetricsError> {
        self.ticks
            .binary_search_by_key(&tick, |l| l.tick)
            .map(|i| &self.ticks[i])
            .map_err(|_| MetricsError::NotFound(tick))
    }
}

/// Mean bytes sent per vehicle, per tick. A tick without vehicles is 0.
pub fn avg_bandwidth(run: &RunData) -> Vec<(Tick, f64)> {
    run.ticks
        .iter()
        .map(|l| {
            let n = l.vehicles.len();
            let mean =
                if n == 0 { 0.0 } else { l.vehicles.iter().map(|v| v.bytes_sent as f64).sum::<f64>() / n as f64 };
            (l.tick, mean)
        })
        .collect()
}

/// Elementwise sum of the vehicles' TTV histograms at `tick`.
pub fn ttv_distribution(run: &RunData, tick: Tick) -> Result<BTreeMap<u32, u64>, MetricsError> {
    Ok(sum_ttv(&run.tick(tick)?.vehicles))
}

pub fn sum_ttv(records: &[MetricsRecord]) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for r in records {
        for (&d, &n) in &r.ttv {
            *out.entry(d).or_insert(0) += n;
        }
    }
    out
}

/// Cooperative perception ratio per spatial cell at `tick`: objects known
/// only from others over objects perceived locally, summed over the cell's
/// vehicles. Cells without local objects have no ratio and are left out.
pub fn cpr(run: &RunData, tick: Tick, cell: f64) -> Result<BTreeMap<(i64, i64), f64>, MetricsError> {
    cpr_of(&run.tick(tick)?.vehicles, cell)
}

pub fn cpr_of(records: &[MetricsRecord], cell: f64) -> Result<BTreeMap<(i64, i64), f64>, MetricsError> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(MetricsError::BadCell(cell));
    }
    let mut sums: BTreeMap<(i64, i64), (u64, u64)> = BTreeMap::new();
    for r in records {
        let key = ((r.x / cell).floor() as i64, (r.y / cell).floor() as i64);
        let s = sums.entry(key).or_default();
        s.0 += r.all_objects.saturating_sub(r.local_objects);
        s.1 += r.local_objects;
    }
    Ok(sums
        .into_iter()
        .filter(|(_, (_, local))| *local > 0)
        .map(|(k, (remote, local))| (k, remote as f64 / local as f64))
        .collect())
}
