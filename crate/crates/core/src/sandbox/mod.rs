//! Per-vehicle module graphs.
//!
//! A vehicle is a set of modules wired into a DAG. Each tick the modules run
//! once in topological order; a module's inbox is the concatenation of its
//! predecessors' outboxes, and entry modules additionally get the network
//! inbox. Modules see the world only through [`SandboxCtx`].

mod ctx;
mod flow;
pub mod modules;
mod types;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use thiserror::Error;

use crate::cpm::{Cpm, StationId};
use crate::metrics::MetricsRecord;
use crate::trace::VehicleId;

pub use ctx::{is_proof, ProofToken, SandboxCtx, VehicleCounters, VehicleEnv, PROOF_FLAG};
pub use flow::{predecessors, validate_flow, FlowGraph};
pub use modules::{ModuleRegistry, ObuModule};
pub use types::{CompiledType, TypeRegistry, VehicleTypeSpec, BUILTIN_TYPES};

#[derive(Debug, Error, PartialEq)]
pub enum SandboxError {
    #[error("flow contains a cycle through edge {from} -> {to}")]
    Cycle { from: String, to: String },
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("unknown module kind `{0}`")]
    UnknownKind(String),
    #[error("unknown vehicle type `{0}`")]
    UnknownType(String),
    #[error("module `{module}`: {message}")]
    Param { module: String, message: String },
    #[error("{0}")]
    Schema(String),
}

/// One simulated on-board unit.
pub struct Vehicle {
    pub id: VehicleId,
    pub name: String,
    pub station: Option<StationId>,
    kind: Arc<CompiledType>,
    modules: Vec<Box<dyn ObuModule>>,
    counters: VehicleCounters,
}

/// What a vehicle produced in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    /// Encoded CPMs, in broadcast order.
    pub broadcasts: Vec<Arc<[u8]>>,
    pub record: MetricsRecord,
}

impl std::fmt::Debug for Vehicle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vehicle")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("type", &self.kind.spec.name)
            .field("station", &self.station)
            .finish()
    }
}

/// Instantiates a vehicle of a registered type with fresh module state.
pub fn build_vehicle(
    registry: &TypeRegistry,
    type_name: &str,
    id: VehicleId,
    name: &str,
    station: Option<StationId>,
) -> Result<Vehicle, SandboxError> {
    let kind = registry.get(type_name).ok_or_else(|| SandboxError::UnknownType(type_name.to_string()))?;
    let modules = registry.instantiate(&kind)?;
    Ok(Vehicle { id, name: name.to_string(), station, kind, modules, counters: VehicleCounters::default() })
}

impl Vehicle {
    pub fn type_name(&self) -> &str {
        &self.kind.spec.name
    }

    pub fn uses_perception(&self) -> bool {
        self.kind.uses_perception
    }

    pub fn counters(&self) -> &VehicleCounters {
        &self.counters
    }

    /// Runs every module once. A failing or panicking module aborts this
    /// vehicle's tick: its broadcasts and counter updates are discarded and
    /// the error count goes up.
    pub fn tick(&mut self, inbox: Vec<Cpm>, env: &VehicleEnv<'_>) -> TickOutput {
        let mut ctx = SandboxCtx::new(env, self.id, &self.name, self.station);
        let kind = Arc::clone(&self.kind);
        let modules = &mut self.modules;
        let result = catch_unwind(AssertUnwindSafe(|| run_flow(&kind, modules, inbox, &mut ctx)));

        let broadcasts = match result {
            Ok(Ok(())) => ctx.commit(&mut self.counters),
            _ => {
                self.counters.errors += 1;
                Vec::new()
            }
        };
        let bytes_sent = broadcasts.iter().map(|b| b.len() as u64).sum();
        TickOutput { broadcasts, record: self.counters.record(env, &self.name, self.type_name(), bytes_sent) }
    }
}

fn run_flow(
    kind: &CompiledType,
    modules: &mut [Box<dyn ObuModule>],
    network_inbox: Vec<Cpm>,
    ctx: &mut SandboxCtx<'_>,
) -> anyhow::Result<()> {
    let mut outboxes: Vec<Vec<Cpm>> = vec![Vec::new(); modules.len()];
    let mut network_inbox = Some(network_inbox);
    let last_entry = kind.order.iter().rposition(|&i| kind.entry[i]);
    for (pos, &i) in kind.order.iter().enumerate() {
        let mut inbox: Vec<Cpm> = Vec::new();
        for &p in &kind.preds[i] {
            inbox.extend(outboxes[p].iter().cloned());
        }
        if kind.entry[i] {
            if Some(pos) == last_entry {
                inbox.extend(network_inbox.take().unwrap_or_default());
            } else if let Some(net) = &network_inbox {
                inbox.extend(net.iter().cloned());
            }
        }
        outboxes[i] = modules[i].process(inbox, ctx)?;
    }
    Ok(())
}
