//! Collective perception messages: the single data shape exchanged both on
//! the air and between modules inside a vehicle.
//!
//! Wire layout (little-endian, 34-byte header + 32 bytes per object):
//!
//! | field            | type      |
//! |------------------|-----------|
//! | sender_station   | u32       |
//! | gen_tick         | u32       |
//! | sender pose      | 3 x f64   |
//! | object count     | u16       |
//! | per object       | u32 plate, 2 x f64 position, f64 heading, u32 observed_tick |
//!
//! Private extensions never reach the wire.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::trace::{Tick, VehicleId};

pub const HEADER_LEN: usize = 4 + 4 + 3 * 8 + 2;
pub const OBJECT_LEN: usize = 4 + 2 * 8 + 8 + 4;

/// V2X station identifier, assigned densely at spawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StationId(pub u32);

impl StationId {
    /// Sender id used on messages that never leave the vehicle
    /// (e.g. produced by a vehicle without a V2X station).
    pub const LOCAL: StationId = StationId(u32::MAX);
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "st{}", self.0)
    }
}

/// Ground-truth object as reported by perception. The plate is the
/// vehicle's numberplate, which equals its trace id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceivedObject {
    pub plate: VehicleId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub observed_tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cpm {
    pub sender_station: StationId,
    pub gen_tick: Tick,
    pub sender_pose: Pose,
    pub objects: Vec<PerceivedObject>,
    pub extensions: BTreeMap<String, Vec<u8>>,
}

impl Default for StationId {
    fn default() -> Self {
        StationId::LOCAL
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("too many objects for one message: {0}")]
    TooManyObjects(usize),
    #[error("truncated message: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
}

impl Cpm {
    pub fn new(sender_station: StationId, gen_tick: Tick, sender_pose: Pose) -> Self {
        Cpm { sender_station, gen_tick, sender_pose, objects: Vec::new(), extensions: BTreeMap::new() }
    }

    /// Copy of the message as it would appear after a round trip over the
    /// air: extensions removed.
    pub fn stripped(&self) -> Cpm {
        Cpm { extensions: BTreeMap::new(), ..self.clone() }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + OBJECT_LEN * self.objects.len()
    }

    /// Canonical wire encoding; extensions are skipped.
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut buf)?;
        Ok(buf)
    }

    pub fn encode_into(&self, buf: &mut Vec<u8>) -> Result<(), WireError> {
        let count = u16::try_from(self.objects.len()).map_err(|_| WireError::TooManyObjects(self.objects.len()))?;
        buf.extend_from_slice(&self.sender_station.0.to_le_bytes());
        buf.extend_from_slice(&self.gen_tick.to_le_bytes());
        buf.extend_from_slice(&self.sender_pose.x.to_le_bytes());
        buf.extend_from_slice(&self.sender_pose.y.to_le_bytes());
        buf.extend_from_slice(&self.sender_pose.heading.to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
        for o in &self.objects {
            buf.extend_from_slice(&o.plate.0.to_le_bytes());
            buf.extend_from_slice(&o.x.to_le_bytes());
            buf.extend_from_slice(&o.y.to_le_bytes());
            buf.extend_from_slice(&o.heading.to_le_bytes());
            buf.extend_from_slice(&o.observed_tick.to_le_bytes());
        }
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Cpm, WireError> {
        let mut r = Cursor { bytes, pos: 0 };
        let sender_station = StationId(r.u32()?);
        let gen_tick = r.u32()?;
        let sender_pose = Pose::new(r.f64()?, r.f64()?, r.f64()?);
        let count = r.u16()? as usize;
        r.need(count * OBJECT_LEN)?;
        let mut objects = Vec::with_capacity(count);
        for _ in 0..count {
            objects.push(PerceivedObject {
                plate: VehicleId(r.u32()?),
                x: r.f64()?,
                y: r.f64()?,
                heading: r.f64()?,
                observed_tick: r.u32()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(WireError::Trailing(bytes.len() - r.pos));
        }
        Ok(Cpm { sender_station, gen_tick, sender_pose, objects, extensions: BTreeMap::new() })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn need(&self, n: usize) -> Result<(), WireError> {
        if self.bytes.len() - self.pos < n {
            Err(WireError::Truncated { need: self.pos + n, have: self.bytes.len() })
        } else {
            Ok(())
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        self.need(N)?;
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        self.take().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        self.take().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        self.take().map(f64::from_le_bytes)
    }
}
