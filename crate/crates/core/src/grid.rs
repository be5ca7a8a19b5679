//! Per-tick uniform grid over vehicle positions.
//!
//! The map is cut into square cells of `cell_size` meters with a ring of two
//! empty cells around the bounding box of all positions, so that positions a
//! little outside the road network (e.g. a coordinate of -1.6 next to an edge
//! road at 0) still land in a valid cell. A radius query scans the ego cell
//! and its eight neighbours, which is exact as long as `radius <= cell_size`.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::Point;
use crate::trace::{VehicleId, VehicleState};

/// Empty cells kept on each side of the occupied bounding box.
pub const MARGIN_CELLS: i64 = 2;

/// Upper bound on the dense cell array, to fail loudly instead of
/// allocating gigabytes for a wildly spread trace.
const MAX_CELLS: i64 = 64 * 1024 * 1024;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("query radius {radius} exceeds cell size {cell_size}")]
    RadiusTooLarge { radius: f64, cell_size: f64 },
    #[error("vehicle {0} is not in the index")]
    UnknownVehicle(VehicleId),
    #[error("vehicle {0} appears more than once")]
    DuplicateVehicle(VehicleId),
    #[error("vehicle {0} has a non-finite position")]
    NonFinite(VehicleId),
    #[error("grid of {cols}x{rows} cells is too large; increase the cell size")]
    TooLarge { cols: i64, rows: i64 },
}

#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    origin: Point,
    cols: i64,
    rows: i64,
    /// Row-major; each entry lists indices into `states`, ascending.
    cells: Vec<Vec<u32>>,
    states: Vec<VehicleState>,
    by_id: HashMap<VehicleId, u32>,
}

impl GridIndex {
    /// Builds the index in a single pass over `states`.
    pub fn rebuild(states: &[VehicleState], cell_size: f64) -> Result<Self, GridError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(GridError::BadCellSize(cell_size));
        }
        let mut states = states.to_vec();
        states.sort_by_key(|s| s.id);

        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut by_id = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if !(s.x.is_finite() && s.y.is_finite()) {
                return Err(GridError::NonFinite(s.id));
            }
            if by_id.insert(s.id, i as u32).is_some() {
                return Err(GridError::DuplicateVehicle(s.id));
            }
            lo = Point::new(lo.x.min(s.x), lo.y.min(s.y));
            hi = Point::new(hi.x.max(s.x), hi.y.max(s.y));
        }
        if states.is_empty() {
            lo = Point::ORIGIN;
            hi = Point::ORIGIN;
        }

        let margin = MARGIN_CELLS as f64 * cell_size;
        let origin = Point::new(lo.x - margin, lo.y - margin);
        let span = |a: f64, b: f64| ((b - a) / cell_size).floor() as i64 + 1 + 2 * MARGIN_CELLS;
        let cols = span(lo.x, hi.x);
        let rows = span(lo.y, hi.y);
        if cols.saturating_mul(rows) > MAX_CELLS {
            return Err(GridError::TooLarge { cols, rows });
        }

        let mut grid =
            GridIndex { cell_size, origin, cols, rows, cells: vec![Vec::new(); (cols * rows) as usize], states, by_id };
        for i in 0..grid.states.len() {
            let (cx, cy) = grid.cell_of(grid.states[i].position());
            let slot = grid.slot(cx, cy).expect("position inside the margin ring");
            grid.cells[slot].push(i as u32);
        }
        Ok(grid)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    /// Grid dimensions in cells, margin included.
    pub fn dims(&self) -> (i64, i64) {
        (self.cols, self.rows)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// All indexed states, sorted by id.
    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleState> {
        self.by_id.get(&id).map(|&i| &self.states[i as usize])
    }

    /// Integer cell coordinates of a world position.
    pub fn cell_of(&self, p: Point) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.cell_size).floor() as i64,
            ((p.y - self.origin.y) / self.cell_size).floor() as i64,
        )
    }

    fn slot(&self, cx: i64, cy: i64) -> Option<usize> {
        (cx >= 0 && cy >= 0 && cx < self.cols && cy < self.rows).then(|| (cy * self.cols + cx) as usize)
    }

    /// Number of vehicles in each occupied cell, keyed by cell coordinates.
    pub fn occupancy(&self) -> Vec<((i64, i64), usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .map(|(i, c)| ((i as i64 % self.cols, i as i64 / self.cols), c.len()))
            .collect()
    }

    /// The cells scanned by a query centered on `ego`: its own cell and the
    /// eight around it, clipped to the grid.
    pub fn candidate_cells(&self, ego: VehicleId) -> Result<Vec<(i64, i64)>, GridError> {
        let s = self.get(ego).ok_or(GridError::UnknownVehicle(ego))?;
        let (cx, cy) = self.cell_of(s.position());
        let mut out = Vec::with_capacity(9);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if self.slot(cx + dx, cy + dy).is_some() {
                    out.push((cx + dx, cy + dy));
                }
            }
        }
        Ok(out)
    }

    /// Vehicles other than `ego` within `radius` (inclusive) of its
    /// position, sorted by id.
    pub fn get_nearby_vehicles(&self, ego: VehicleId, radius: f64) -> Result<Vec<VehicleState>, GridError> {
        let mut out = Vec::new();
        self.for_each_nearby(ego, radius, |s| out.push(*s))?;
        Ok(out)
    }

    /// Allocation-free variant of [`get_nearby_vehicles`](Self::get_nearby_vehicles):
    /// calls `f` for each neighbour, in id order.
    pub fn for_each_nearby<F: FnMut(&VehicleState)>(
        &self,
        ego: VehicleId,
        radius: f64,
        mut f: F,
    ) -> Result<(), GridError> {
        if !(radius <= self.cell_size) {
            return Err(GridError::RadiusTooLarge { radius, cell_size: self.cell_size });
        }
        let &ego_idx = self.by_id.get(&ego).ok_or(GridError::UnknownVehicle(ego))?;
        let center = self.states[ego_idx as usize].position();
        let (cx, cy) = self.cell_of(center);

        let mut hits: Vec<u32> = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(slot) = self.slot(cx + dx, cy + dy) else { continue };
                for &i in &self.cells[slot] {
                    if i != ego_idx && self.states[i as usize].position().dist(center) <= radius {
                        hits.push(i);
                    }
                }
            }
        }
        // indices follow id order, so sorting them sorts by id
        hits.sort_unstable();
        for i in hits {
            f(&self.states[i as usize]);
        }
        Ok(())
    }
}
