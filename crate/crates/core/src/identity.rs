//! Ground-truth numberplate <-> V2X station matching.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cpm::StationId;
use crate::trace::VehicleId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("unknown plate {0}")]
    UnknownPlate(VehicleId),
    #[error("unknown station {0}")]
    UnknownStation(StationId),
    #[error("station {0} is assigned twice")]
    DuplicateStation(StationId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
enum Slot {
    #[default]
    Absent,
    Unconnected,
    Connected(StationId),
}

/// Bijection between the plates of connected vehicles and their stations.
/// Unconnected vehicles are known by plate but have no station.
///
/// Plates are looked up by index, so the table is sized by the largest
/// plate number; trace-interned ids are dense.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchTable {
    plates: Vec<Slot>,
    stations: BTreeMap<StationId, VehicleId>,
}

impl MatchTable {
    /// Builds the table from the alive vehicle registry.
    pub fn build<I>(vehicles: I) -> Result<Self, MatchError>
    where
        I: IntoIterator<Item = (VehicleId, Option<StationId>)>,
    {
        let mut table = MatchTable::default();
        for (plate, station) in vehicles {
            if let Some(st) = station {
                if table.stations.insert(st, plate).is_some() {
                    return Err(MatchError::DuplicateStation(st));
                }
            }
            let i = plate.0 as usize;
            if table.plates.len() <= i {
                table.plates.resize(i + 1, Slot::Absent);
            }
            table.plates[i] = station.map_or(Slot::Unconnected, Slot::Connected);
        }
        Ok(table)
    }

    /// `Ok(None)` for a known vehicle without V2X.
    pub fn station_of(&self, plate: VehicleId) -> Result<Option<StationId>, MatchError> {
        match self.plates.get(plate.0 as usize) {
            Some(Slot::Connected(st)) => Ok(Some(*st)),
            Some(Slot::Unconnected) => Ok(None),
            _ => Err(MatchError::UnknownPlate(plate)),
        }
    }

    pub fn plate_of(&self, station: StationId) -> Result<VehicleId, MatchError> {
        self.stations.get(&station).copied().ok_or(MatchError::UnknownStation(station))
    }

    /// Number of station entries, i.e. connected vehicles.
    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> impl Iterator<Item = (StationId, VehicleId)> + '_ {
        self.stations.iter().map(|(s, p)| (*s, *p))
    }

    pub fn plates(&self) -> BTreeSet<VehicleId> {
        self.plates.iter().enumerate().filter(|(_, s)| **s != Slot::Absent).map(|(i, _)| VehicleId(i as u32)).collect()
    }
}
