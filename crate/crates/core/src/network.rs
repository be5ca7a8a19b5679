//! Single-hop broadcast over a lossless unit-disk radio.
//!
//! A broadcast at tick `t` reaches every station within `comm_range` of the
//! sender's position at `t` and is delivered at `t + 1`. Recipients are
//! resolved at send time through the tick's [`GridIndex`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::cpm::{Cpm, StationId, WireError};
use crate::geometry::Point;
use crate::grid::{GridError, GridIndex};
use crate::identity::MatchTable;
use crate::trace::Tick;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("station {0} is not registered with a position")]
    Unregistered(StationId),
    #[error("communication range must be positive and finite, got {0}")]
    BadRange(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Where stations are this tick: the vehicle grid plus the plate/station
/// table.
#[derive(Clone, Copy)]
pub struct RadioMap<'a> {
    pub grid: &'a GridIndex,
    pub matches: &'a MatchTable,
}

impl RadioMap<'_> {
    fn position(&self, station: StationId) -> Result<Point, NetworkError> {
        let plate = self.matches.plate_of(station).map_err(|_| NetworkError::Unregistered(station))?;
        self.grid.get(plate).map(|s| s.position()).ok_or(NetworkError::Unregistered(station))
    }

    /// Stations other than `sender` within `range` of it, ascending.
    pub fn stations_in_range(&self, sender: StationId, range: f64) -> Result<Vec<StationId>, NetworkError> {
        let plate = self.matches.plate_of(sender).map_err(|_| NetworkError::Unregistered(sender))?;
        let mut out = Vec::new();
        self.grid.for_each_nearby(plate, range, |s| {
            if let Ok(Some(st)) = self.matches.station_of(s.id) {
                out.push(st);
            }
        })?;
        out.sort_unstable();
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PendingDelivery {
    pub payload: Arc<[u8]>,
    pub origin: StationId,
    pub origin_pos: Point,
    pub send_tick: Tick,
    pub recipients: Vec<StationId>,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct Network {
    comm_range: f64,
    pending: Vec<PendingDelivery>,
    bytes_sent: BTreeMap<StationId, u64>,
    seq: u64,
    dropped: u64,
}

impl Network {
    pub fn new(comm_range: f64) -> Result<Self, NetworkError> {
        if !(comm_range > 0.0 && comm_range.is_finite()) {
            return Err(NetworkError::BadRange(comm_range));
        }
        Ok(Network { comm_range, pending: Vec::new(), bytes_sent: BTreeMap::new(), seq: 0, dropped: 0 })
    }

    pub fn comm_range(&self) -> f64 {
        self.comm_range
    }

    /// Strips extensions, encodes `cpm` and queues it for next tick.
    /// Returns the number of bytes put on the air.
    pub fn shb_broadcast(
        &mut self,
        radio: RadioMap<'_>,
        sender: StationId,
        cpm: &Cpm,
        tick: Tick,
    ) -> Result<usize, NetworkError> {
        self.broadcast_encoded(radio, sender, cpm.encode()?.into(), tick)
    }

    /// Queues an already encoded payload.
    pub fn broadcast_encoded(
        &mut self,
        radio: RadioMap<'_>,
        sender: StationId,
        payload: Arc<[u8]>,
        tick: Tick,
    ) -> Result<usize, NetworkError> {
        let origin_pos = radio.position(sender)?;
        let recipients = radio.stations_in_range(sender, self.comm_range)?;
        let len = payload.len();
        *self.bytes_sent.entry(sender).or_default() += len as u64;
        self.pending.push(PendingDelivery {
            payload,
            origin: sender,
            origin_pos,
            send_tick: tick,
            recipients,
            seq: self.seq,
        });
        self.seq += 1;
        Ok(len)
    }

    /// Delivers everything sent at `tick - 1`. Inboxes are ordered by sender
    /// station, then by send order. Stations with nothing to receive are
    /// absent from the map. Deliveries whose tick was skipped are dropped.
    pub fn step(&mut self, tick: Tick) -> BTreeMap<StationId, Vec<Cpm>> {
        let mut due = Vec::new();
        let mut keep = Vec::new();
        for p in self.pending.drain(..) {
            match (p.send_tick as u64 + 1).cmp(&(tick as u64)) {
                std::cmp::Ordering::Equal => due.push(p),
                std::cmp::Ordering::Greater => keep.push(p),
                std::cmp::Ordering::Less => self.dropped += 1,
            }
        }
        self.pending = keep;
        due.sort_by_key(|p| (p.origin, p.seq));

        let mut inboxes: FxHashMap<StationId, Vec<Cpm>> = FxHashMap::default();
        for p in due {
            let cpm = Cpm::decode(&p.payload).expect("payloads are produced by Cpm::encode");
            for r in p.recipients {
                inboxes.entry(r).or_default().push(cpm.clone());
            }
        }
        inboxes.into_iter().collect()
    }

    pub fn pending(&self) -> &[PendingDelivery] {
        &self.pending
    }

    /// Cumulative bytes broadcast by `station`.
    pub fn bytes_sent(&self, station: StationId) -> u64 {
        self.bytes_sent.get(&station).copied().unwrap_or(0)
    }

    /// Deliveries discarded because their delivery tick never ran.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}
