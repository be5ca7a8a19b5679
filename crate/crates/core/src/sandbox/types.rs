//! Vehicle type definitions.
//!
//! A type is a TOML table:
//!
//! ```toml
//! [ConnectedVehicle]
//! connected = true
//! modules = ["perception", "cpm_assembler", "broadcast", "store:object_store"]
//! entry = ["store"]
//! edges = { perception = ["cpm_assembler", "store"], cpm_assembler = ["broadcast"] }
//! params.cpm_assembler = { interval = 1 }
//! ```
//!
//! Modules are written `name:kind`, or just `kind` when the name is the
//! kind. `entry` lists the modules that receive the network inbox. A table
//! without `modules` only overrides parameters of an existing type.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;

use super::flow::{predecessors, validate_flow, FlowGraph};
use super::modules::{ModuleRegistry, ObuModule};
use super::SandboxError;

pub const BUILTIN_TYPES: &str = r#"
[UnconnectedVehicle]
connected = false
modules = ["perception", "object_store"]
edges = { perception = ["object_store"] }

[ConnectedVehicle]
connected = true
modules = ["perception", "cpm_assembler", "broadcast", "object_store"]
entry = ["object_store"]
edges = { perception = ["cpm_assembler", "object_store"], cpm_assembler = ["broadcast"] }

[PoTVehicle]
connected = true
modules = ["perception", "cpm_assembler", "proof_generator", "broadcast", "object_store", "proof_verifier"]
entry = ["object_store", "proof_verifier"]
edges = { perception = ["cpm_assembler", "object_store", "proof_generator", "proof_verifier"], cpm_assembler = ["broadcast"], proof_generator = ["broadcast"] }

[SpamAttacker]
connected = true
modules = ["spam", "broadcast"]
edges = { spam = ["broadcast"] }

[ReplayAttacker]
connected = true
modules = ["perception", "cpm_assembler", "replay", "broadcast"]
entry = ["replay"]
edges = { perception = ["cpm_assembler"], cpm_assembler = ["replay"], replay = ["broadcast"] }

[SilenceAttacker]
connected = true
modules = ["perception", "object_store"]
entry = ["object_store"]
edges = { perception = ["object_store"] }

[DummyVehicle]
connected = false
modules = []
"#;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypeDef {
    connected: Option<bool>,
    modules: Option<Vec<String>>,
    #[serde(default)]
    entry: Vec<String>,
    #[serde(default)]
    edges: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    params: BTreeMap<String, toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTypeSpec {
    pub name: String,
    pub connected: bool,
    pub graph: FlowGraph,
    /// Module kind per graph node.
    pub kinds: Vec<String>,
    pub entry: Vec<String>,
    pub params: BTreeMap<String, toml::Table>,
}

/// A validated type, ready to instantiate.
#[derive(Debug, Clone)]
pub struct CompiledType {
    pub spec: VehicleTypeSpec,
    pub order: Vec<usize>,
    pub preds: Vec<Vec<usize>>,
    pub entry: Vec<bool>,
    pub uses_perception: bool,
}

#[derive(Clone)]
pub struct TypeRegistry {
    modules: ModuleRegistry,
    types: BTreeMap<String, Arc<CompiledType>>,
}

impl std::fmt::Debug for TypeRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TypeRegistry").field("types", &self.types.keys().collect::<Vec<_>>()).finish()
    }
}

impl Default for TypeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TypeRegistry {
    /// The built-in vehicle types over the built-in module kinds.
    pub fn builtin() -> Self {
        Self::with_modules(ModuleRegistry::with_builtins())
    }

    pub fn with_modules(modules: ModuleRegistry) -> Self {
        let mut r = TypeRegistry { modules, types: BTreeMap::new() };
        r.load_str(BUILTIN_TYPES).expect("built-in types are valid");
        r
    }

    pub fn modules(&self) -> &ModuleRegistry {
        &self.modules
    }

    pub fn get(&self, name: &str) -> Option<Arc<CompiledType>> {
        self.types.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    pub fn load_str(&mut self, text: &str) -> Result<(), SandboxError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SandboxError::Schema(e.to_string()))?;
        self.load_table(&table)
    }

    /// Adds or overrides types from a table of type definitions.
    pub fn load_table(&mut self, table: &toml::Table) -> Result<(), SandboxError> {
        for (name, value) in table {
            let def = TypeDef::deserialize(value.clone())
                .map_err(|e| SandboxError::Schema(format!("vehicle type `{name}`: {e}")))?;
            let spec = match def.modules {
                Some(ref modules) => from_def(name, &def, modules)?,
                None => {
                    let base = self.types.get(name).ok_or_else(|| SandboxError::UnknownType(name.clone()))?;
                    if !def.entry.is_empty() || !def.edges.is_empty() {
                        return Err(SandboxError::Schema(format!(
                            "vehicle type `{name}`: `entry` and `edges` need `modules`"
                        )));
                    }
                    let mut spec = base.spec.clone();
                    if let Some(c) = def.connected {
                        spec.connected = c;
                    }
                    for (module, params) in def.params {
                        spec.params.entry(module).or_default().extend(params);
                    }
                    spec
                }
            };
            let compiled = self.compile(spec)?;
            self.types.insert(name.clone(), Arc::new(compiled));
        }
        Ok(())
    }

    fn compile(&self, spec: VehicleTypeSpec) -> Result<CompiledType, SandboxError> {
        let order = validate_flow(&spec.graph)?;
        let preds = predecessors(&spec.graph, &order)?;
        let mut entry = vec![false; spec.graph.nodes.len()];
        for e in &spec.entry {
            let i = spec.graph.index_of(e).ok_or_else(|| SandboxError::UnknownModule(e.clone()))?;
            entry[i] = true;
        }
        if let Some(m) = spec.params.keys().find(|m| spec.graph.index_of(m).is_none()) {
            return Err(SandboxError::UnknownModule(m.clone()));
        }
        let uses_perception = spec.kinds.iter().any(|k| k == "perception");
        let compiled = CompiledType { spec, order, preds, entry, uses_perception };
        // constructing once surfaces unknown kinds and bad parameters now
        self.instantiate(&compiled)?;
        Ok(compiled)
    }

    pub fn instantiate(&self, t: &CompiledType) -> Result<Vec<Box<dyn ObuModule>>, SandboxError> {
        let empty = toml::Table::new();
        t.spec
            .graph
            .nodes
            .iter()
            .zip(&t.spec.kinds)
            .map(|(name, kind)| self.modules.create(kind, name, t.spec.params.get(name).unwrap_or(&empty)))
            .collect()
    }
}

fn from_def(name: &str, def: &TypeDef, modules: &[String]) -> Result<VehicleTypeSpec, SandboxError> {
    let mut nodes = Vec::with_capacity(modules.len());
    let mut kinds = Vec::with_capacity(modules.len());
    for m in modules {
        let (n, k) = match m.split_once(':') {
            Some((n, k)) => (n.trim(), k.trim()),
            None => (m.trim(), m.trim()),
        };
        if n.is_empty() || k.is_empty() {
            return Err(SandboxError::Schema(format!("vehicle type `{name}`: bad module entry `{m}`")));
        }
        nodes.push(n.to_string());
        kinds.push(k.to_string());
    }
    Ok(VehicleTypeSpec {
        name: name.to_string(),
        connected: def.connected.unwrap_or(true),
        graph: FlowGraph { nodes, edges: def.edges.clone() },
        kinds,
        entry: def.entry.clone(),
        params: def.params.clone(),
    })
}
