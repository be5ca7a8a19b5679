//! Deterministic simulator for connected-vehicle on-board-unit behavior and
//! data flow.
//!
//! A run replays a mobility trace tick by tick. Each tick the grid index is
//! rebuilt, last tick's broadcasts are delivered, every vehicle runs its
//! module graph (perception, message assembly, attacks, proof checks, ...)
//! and per-vehicle metrics are appended to an indexed JSON-lines file.

pub mod cpm;
pub mod geometry;
pub mod grid;
pub mod identity;
pub mod metrics;
pub mod network;
pub mod perception;
pub mod sandbox;
pub mod scenario;
pub mod seed;
pub mod trace;

pub use cpm::{Cpm, PerceivedObject, StationId};
pub use geometry::{Point, Pose};
pub use grid::GridIndex;
pub use identity::MatchTable;
pub use perception::PerceptionConfig;
pub use trace::{Tick, Trace, TraceTick, VehicleId, VehicleState};
