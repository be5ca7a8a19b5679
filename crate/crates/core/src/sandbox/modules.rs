//! Built-in module kinds.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use super::ctx::{is_proof, ProofToken, SandboxCtx, PROOF_FLAG};
use super::SandboxError;
use crate::cpm::{Cpm, PerceivedObject, StationId};
use crate::trace::{Tick, VehicleId};

/// Marks a CPM as this vehicle's own camera output.
pub const LOCAL_EXT: &str = "local";
/// In-vehicle copy of the proof tokens a proof CPM carries.
pub const PROOF_EXT: &str = "proof";

pub trait ObuModule: Send {
    fn name(&self) -> &str;
    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>>;
}

pub type Constructor = Arc<dyn Fn(&str, &toml::Table) -> Result<Box<dyn ObuModule>, SandboxError> + Send + Sync>;

/// Module kinds by name.
#[derive(Clone)]
pub struct ModuleRegistry {
    kinds: FxHashMap<String, Constructor>,
}

impl Default for ModuleRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModuleRegistry {
    pub fn empty() -> Self {
        ModuleRegistry { kinds: FxHashMap::default() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("perception", |name, p| {
            Params::new(name, p, &[])?;
            Ok(Box::new(Perception { name: name.into() }))
        });
        r.register("object_store", |name, p| {
            Params::new(name, p, &[])?;
            Ok(Box::new(ObjectStore { name: name.into() }))
        });
        r.register("cpm_assembler", |name, p| {
            let p = Params::new(name, p, &["interval"])?;
            let interval = p.positive_int("interval", 1)? as Tick;
            Ok(Box::new(CpmAssembler { name: name.into(), interval }))
        });
        r.register("broadcast", |name, p| {
            Params::new(name, p, &[])?;
            Ok(Box::new(Broadcast { name: name.into() }))
        });
        r.register("proof_generator", |name, p| {
            Params::new(name, p, &[])?;
            Ok(Box::new(ProofGenerator { name: name.into(), proved: FxHashSet::default() }))
        });
        r.register("proof_verifier", |name, p| {
            let p = Params::new(name, p, &["threshold"])?;
            let threshold = p.positive_int("threshold", 2)? as usize;
            Ok(Box::new(ProofVerifier {
                name: name.into(),
                threshold,
                first_seen: FxHashMap::default(),
                provers: FxHashMap::default(),
                verified: FxHashSet::default(),
            }))
        });
        r.register("spam", |name, p| {
            let p = Params::new(name, p, &["k"])?;
            let k = p.positive_int("k", 5)?;
            if k > u16::MAX as u64 {
                return Err(p.error(format!("k = {k} does not fit in one CPM")));
            }
            Ok(Box::new(Spam { name: name.into(), k: k as usize }))
        });
        r.register("replay", |name, p| {
            let p = Params::new(name, p, &["capacity", "rate"])?;
            let capacity = p.positive_int("capacity", 50)? as usize;
            let rate = p.positive_int("rate", 1)? as usize;
            Ok(Box::new(Replay { name: name.into(), capacity, rate, seen: VecDeque::new() }))
        });
        r
    }

    pub fn register<F>(&mut self, kind: &str, ctor: F)
    where
        F: Fn(&str, &toml::Table) -> Result<Box<dyn ObuModule>, SandboxError> + Send + Sync + 'static,
    {
        self.kinds.insert(kind.to_string(), Arc::new(ctor));
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.kinds.contains_key(kind)
    }

    pub fn create(&self, kind: &str, name: &str, params: &toml::Table) -> Result<Box<dyn ObuModule>, SandboxError> {
        let ctor = self.kinds.get(kind).ok_or_else(|| SandboxError::UnknownKind(kind.to_string()))?;
        ctor(name, params)
    }
}

/// Typed access to a module's parameter table.
pub struct Params<'a> {
    module: &'a str,
    table: &'a toml::Table,
}

impl<'a> Params<'a> {
    pub fn new(module: &'a str, table: &'a toml::Table, allowed: &[&str]) -> Result<Self, SandboxError> {
        let p = Params { module, table };
        if let Some(k) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(p.error(format!("unknown parameter `{k}`")));
        }
        Ok(p)
    }

    pub fn error(&self, message: String) -> SandboxError {
        SandboxError::Param { module: self.module.to_string(), message }
    }

    pub fn positive_int(&self, key: &str, default: u64) -> Result<u64, SandboxError> {
        match self.table.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(v)) if *v > 0 => Ok(*v as u64),
            Some(v) => Err(self.error(format!("`{key}` must be a positive integer, got {v}"))),
        }
    }
}

fn is_local(cpm: &Cpm) -> bool {
    cpm.extensions.contains_key(LOCAL_EXT)
}

/// Publishes the camera output as a local CPM.
struct Perception {
    name: String,
}

impl ObuModule for Perception {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, _inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        let mut cpm = Cpm::new(StationId::LOCAL, ctx.tick(), ctx.pose());
        cpm.objects = ctx.perceive().to_vec();
        cpm.extensions.insert(LOCAL_EXT.into(), Vec::new());
        Ok(vec![cpm])
    }
}

/// Remembers which plates were seen locally and which were heard about.
struct ObjectStore {
    name: String,
}

impl ObuModule for ObjectStore {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        let own = ctx.own_plate();
        for cpm in inbox.iter().filter(|c| !is_proof(c)) {
            let local = is_local(cpm);
            for o in cpm.objects.iter().filter(|o| o.plate != own) {
                if local {
                    ctx.record_local(o.plate);
                } else {
                    ctx.record_received(o.plate);
                }
            }
        }
        Ok(Vec::new())
    }
}

/// Packs the objects of its inbox into one outgoing CPM, on ticks that are
/// a multiple of `interval` and only when there is something to say.
struct CpmAssembler {
    name: String,
    interval: Tick,
}

impl ObuModule for CpmAssembler {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        if !ctx.tick().is_multiple_of(self.interval) {
            return Ok(Vec::new());
        }
        let mut seen = FxHashSet::default();
        let objects: Vec<PerceivedObject> = inbox
            .into_iter()
            .filter(|c| !is_proof(c))
            .flat_map(|c| c.objects)
            .filter(|o| seen.insert(o.plate))
            .collect();
        if objects.is_empty() {
            return Ok(Vec::new());
        }
        let mut cpm = Cpm::new(ctx.station().unwrap_or(StationId::LOCAL), ctx.tick(), ctx.pose());
        cpm.objects = objects;
        Ok(vec![cpm])
    }
}

struct Broadcast {
    name: String,
}

impl ObuModule for Broadcast {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        for cpm in &inbox {
            ctx.broadcast(cpm)?;
        }
        Ok(Vec::new())
    }
}

/// Issues one proof token for every plate the camera reads for the first
/// time.
struct ProofGenerator {
    name: String,
    proved: FxHashSet<VehicleId>,
}

impl ObuModule for ProofGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        let mut objects = Vec::new();
        let mut tokens = Vec::new();
        for cpm in inbox.iter().filter(|c| is_local(c)) {
            for o in &cpm.objects {
                if self.proved.insert(o.plate) {
                    let token = ctx.issue_proof(o.plate)?;
                    objects.push(token.to_object(crate::geometry::Pose::new(o.x, o.y, o.heading)));
                    tokens.extend_from_slice(&token.prover.0.to_le_bytes());
                    tokens.extend_from_slice(&token.target.0.to_le_bytes());
                    tokens.extend_from_slice(&token.tick.to_le_bytes());
                    tokens.extend_from_slice(&token.nonce.to_le_bytes());
                }
            }
        }
        if objects.is_empty() {
            return Ok(Vec::new());
        }
        let station = ctx.station().ok_or_else(|| anyhow::anyhow!("proof generator needs a station"))?;
        if ctx.tick() & PROOF_FLAG != 0 {
            anyhow::bail!("tick {} too large for a proof CPM", ctx.tick());
        }
        let mut cpm = Cpm::new(station, ctx.tick() | PROOF_FLAG, ctx.pose());
        cpm.objects = objects;
        cpm.extensions.insert(PROOF_EXT.into(), tokens);
        Ok(vec![cpm])
    }
}

/// Counts an object as verified once `threshold` distinct other stations
/// have sent valid proofs about it, and records how long that took since
/// the object was first known.
struct ProofVerifier {
    name: String,
    threshold: usize,
    first_seen: FxHashMap<VehicleId, Tick>,
    provers: FxHashMap<VehicleId, BTreeSet<StationId>>,
    verified: FxHashSet<VehicleId>,
}

impl ObuModule for ProofVerifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        let own_plate = ctx.own_plate();
        let own_station = ctx.station();
        let tick = ctx.tick();
        let mut touched = BTreeSet::new();
        for cpm in &inbox {
            if is_proof(cpm) {
                for t in ProofToken::all_in(cpm) {
                    if Some(t.prover) == own_station || t.target == own_plate || !ctx.verify_proof(&t) {
                        continue;
                    }
                    if self.provers.entry(t.target).or_default().insert(t.prover) {
                        touched.insert(t.target);
                    }
                }
            } else {
                for o in cpm.objects.iter().filter(|o| o.plate != own_plate) {
                    if let std::collections::hash_map::Entry::Vacant(e) = self.first_seen.entry(o.plate) {
                        e.insert(tick);
                        touched.insert(o.plate);
                    }
                }
            }
        }
        for plate in touched {
            if self.verified.contains(&plate) {
                continue;
            }
            let (Some(&seen), Some(provers)) = (self.first_seen.get(&plate), self.provers.get(&plate)) else {
                continue;
            };
            if provers.len() >= self.threshold {
                self.verified.insert(plate);
                ctx.record_ttv(tick - seen);
            }
        }
        Ok(Vec::new())
    }
}

/// Invents `k` objects per tick at uniform positions within radio range.
struct Spam {
    name: String,
    k: usize,
}

impl ObuModule for Spam {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, _inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        let (tick, pose, range) = (ctx.tick(), ctx.pose(), ctx.comm_range());
        let station = ctx.station().unwrap_or(StationId::LOCAL);
        let rng = ctx.rng();
        let objects = (0..self.k)
            .map(|_| {
                let r = range * rng.random::<f64>().sqrt();
                let theta = rng.random_range(-PI..PI);
                PerceivedObject {
                    plate: VehicleId(rng.random()),
                    x: pose.x + r * theta.cos(),
                    y: pose.y + r * theta.sin(),
                    heading: rng.random_range(-PI..PI),
                    observed_tick: tick,
                }
            })
            .collect();
        let mut cpm = Cpm::new(station, tick, pose);
        cpm.objects = objects;
        Ok(vec![cpm])
    }
}

/// Keeps the last `capacity` CPMs it was handed and re-emits `rate` of them,
/// picked at random, each tick. Only CPMs from earlier ticks are replayed.
struct Replay {
    name: String,
    capacity: usize,
    rate: usize,
    seen: VecDeque<Cpm>,
}

impl ObuModule for Replay {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, inbox: Vec<Cpm>, ctx: &mut SandboxCtx<'_>) -> anyhow::Result<Vec<Cpm>> {
        let n = self.rate.min(self.seen.len());
        let mut picks = rand::seq::index::sample(ctx.rng(), self.seen.len(), n).into_vec();
        picks.sort_unstable();
        let out = picks.into_iter().map(|i| self.seen[i].clone()).collect();
        for cpm in inbox {
            if self.seen.len() == self.capacity {
                self.seen.pop_front();
            }
            self.seen.push_back(cpm.stripped());
        }
        Ok(out)
    }
}
