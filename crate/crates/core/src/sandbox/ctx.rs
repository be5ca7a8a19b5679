//! The API surface a module can touch.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use crate::cpm::{Cpm, PerceivedObject, StationId};
use crate::geometry::Pose;
use crate::identity::MatchTable;
use crate::metrics::MetricsRecord;
use crate::seed::{combine, fnv1a};
use crate::trace::{Tick, VehicleId, VehicleState};

/// Set in `gen_tick` of CPMs that carry proof tokens instead of
/// observations.
pub const PROOF_FLAG: u32 = 1 << 31;

const NONCE_MASK: u64 = (1 << 53) - 1;
const PROOF_DOMAIN: u64 = 0x5052_4F4F_4653;

/// Everything a vehicle is allowed to know this tick, prepared by the
/// runner.
#[derive(Debug, Clone, Copy)]
pub struct VehicleEnv<'a> {
    pub tick: Tick,
    pub state: VehicleState,
    /// This vehicle's camera output for the tick.
    pub perceived: &'a [PerceivedObject],
    pub matches: &'a MatchTable,
    pub comm_range: f64,
    pub seed: u64,
}

/// An opaque attestation that `prover` saw `target` at `tick`. Tokens are
/// unforgeable by assumption: only [`SandboxCtx::issue_proof`] makes valid
/// nonces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProofToken {
    pub prover: StationId,
    pub target: VehicleId,
    pub tick: Tick,
    pub nonce: u64,
}

impl ProofToken {
    fn expected_nonce(seed: u64, prover: StationId, target: VehicleId, tick: Tick) -> u64 {
        let key = combine(&[seed, PROOF_DOMAIN]);
        combine(&[key, prover.0 as u64, target.0 as u64, tick as u64]) & NONCE_MASK
    }

    /// Wire form inside a proof CPM: the plate is the target, the position
    /// where it was seen, the nonce rides in the heading field.
    pub fn to_object(&self, seen_at: Pose) -> PerceivedObject {
        PerceivedObject {
            plate: self.target,
            x: seen_at.x,
            y: seen_at.y,
            heading: self.nonce as f64,
            observed_tick: self.tick,
        }
    }

    pub fn from_object(prover: StationId, obj: &PerceivedObject) -> Option<ProofToken> {
        let h = obj.heading;
        if !(h >= 0.0 && h <= NONCE_MASK as f64 && h.fract() == 0.0) {
            return None;
        }
        Some(ProofToken { prover, target: obj.plate, tick: obj.observed_tick, nonce: h as u64 })
    }

    /// Tokens carried by a proof CPM; empty for ordinary CPMs.
    pub fn all_in(cpm: &Cpm) -> Vec<ProofToken> {
        if !is_proof(cpm) {
            return Vec::new();
        }
        cpm.objects.iter().filter_map(|o| ProofToken::from_object(cpm.sender_station, o)).collect()
    }
}

pub fn is_proof(cpm: &Cpm) -> bool {
    cpm.gen_tick & PROOF_FLAG != 0
}

/// Persistent per-vehicle metric state.
#[derive(Debug, Clone, Default)]
pub struct VehicleCounters {
    pub local: FxHashSet<VehicleId>,
    pub received: FxHashSet<VehicleId>,
    pub all: FxHashSet<VehicleId>,
    pub ttv: BTreeMap<u32, u64>,
    pub errors: u64,
}

impl VehicleCounters {
    pub fn record(&self, env: &VehicleEnv<'_>, name: &str, type_name: &str, bytes_sent: u64) -> MetricsRecord {
        MetricsRecord {
            id: name.to_string(),
            vehicle_type: type_name.to_string(),
            x: env.state.x,
            y: env.state.y,
            bytes_sent,
            local_objects: self.local.len() as u64,
            received_objects: self.received.len() as u64,
            all_objects: self.all.len() as u64,
            ttv: self.ttv.clone(),
            errors: self.errors,
        }
    }
}

/// Per-tick handle given to every module of one vehicle. Side effects are
/// staged and only applied if the whole tick succeeds.
pub struct SandboxCtx<'a> {
    env: &'a VehicleEnv<'a>,
    id: VehicleId,
    name: &'a str,
    station: Option<StationId>,
    rng: Option<ChaCha8Rng>,
    outbox: Vec<Arc<[u8]>>,
    local: Vec<VehicleId>,
    received: Vec<VehicleId>,
    ttv: Vec<u32>,
}

impl<'a> SandboxCtx<'a> {
    pub fn new(env: &'a VehicleEnv<'a>, id: VehicleId, name: &'a str, station: Option<StationId>) -> Self {
        SandboxCtx {
            env,
            id,
            name,
            station,
            rng: None,
            outbox: Vec::new(),
            local: Vec::new(),
            received: Vec::new(),
            ttv: Vec::new(),
        }
    }

    pub fn tick(&self) -> Tick {
        self.env.tick
    }

    pub fn own_plate(&self) -> VehicleId {
        self.id
    }

    pub fn station(&self) -> Option<StationId> {
        self.station
    }

    pub fn pose(&self) -> Pose {
        self.env.state.pose()
    }

    pub fn perceive(&self) -> &'a [PerceivedObject] {
        self.env.perceived
    }

    pub fn comm_range(&self) -> f64 {
        self.env.comm_range
    }

    pub fn station_of(&self, plate: VehicleId) -> Option<StationId> {
        self.env.matches.station_of(plate).ok().flatten()
    }

    pub fn plate_of(&self, station: StationId) -> Option<VehicleId> {
        self.env.matches.plate_of(station).ok()
    }

    /// Deterministic per (seed, vehicle, tick).
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        let (seed, name, tick) = (self.env.seed, self.name, self.env.tick);
        self.rng.get_or_insert_with(|| ChaCha8Rng::seed_from_u64(combine(&[seed, fnv1a(name.as_bytes()), tick as u64])))
    }

    /// Queues a single-hop broadcast; extensions are dropped. Returns the
    /// encoded size.
    pub fn broadcast(&mut self, cpm: &Cpm) -> anyhow::Result<usize> {
        self.broadcast_raw(cpm.encode()?.into())
    }

    pub fn broadcast_raw(&mut self, payload: Arc<[u8]>) -> anyhow::Result<usize> {
        if self.station.is_none() {
            anyhow::bail!("vehicle {} has no V2X station", self.name);
        }
        let n = payload.len();
        self.outbox.push(payload);
        Ok(n)
    }

    pub fn record_local(&mut self, plate: VehicleId) {
        self.local.push(plate);
    }

    pub fn record_received(&mut self, plate: VehicleId) {
        self.received.push(plate);
    }

    /// One verification that took `delay` ticks.
    pub fn record_ttv(&mut self, delay: u32) {
        self.ttv.push(delay);
    }

    pub fn issue_proof(&self, target: VehicleId) -> anyhow::Result<ProofToken> {
        let prover = self.station.ok_or_else(|| anyhow::anyhow!("vehicle {} has no V2X station", self.name))?;
        let tick = self.env.tick;
        Ok(ProofToken { prover, target, tick, nonce: ProofToken::expected_nonce(self.env.seed, prover, target, tick) })
    }

    pub fn verify_proof(&self, token: &ProofToken) -> bool {
        token.tick <= self.env.tick
            && token.nonce == ProofToken::expected_nonce(self.env.seed, token.prover, token.target, token.tick)
    }

    pub(super) fn commit(self, counters: &mut VehicleCounters) -> Vec<Arc<[u8]>> {
        for p in self.local {
            counters.local.insert(p);
            counters.all.insert(p);
        }
        for p in self.received {
            counters.received.insert(p);
            counters.all.insert(p);
        }
        for d in self.ttv {
            *counters.ttv.entry(d).or_default() += 1;
        }
        self.outbox
    }
}
