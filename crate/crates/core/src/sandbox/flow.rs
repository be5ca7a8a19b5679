//! Module graphs and their evaluation order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::SandboxError;

/// A directed graph of named modules. `nodes` is in declaration order;
/// `edges` maps a module to its successors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowGraph {
    pub nodes: Vec<String>,
    pub edges: BTreeMap<String, Vec<String>>,
}

impl FlowGraph {
    pub fn new(nodes: &[&str], edges: &[(&str, &str)]) -> Self {
        let mut g = FlowGraph { nodes: nodes.iter().map(|s| s.to_string()).collect(), edges: BTreeMap::new() };
        for (a, b) in edges {
            g.edges.entry(a.to_string()).or_default().push(b.to_string());
        }
        g
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Successor indices per node, with unknown names rejected.
    pub fn successors(&self) -> Result<Vec<Vec<usize>>, SandboxError> {
        let mut seen = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if seen.insert(n.as_str(), i).is_some() {
                return Err(SandboxError::Schema(format!("module `{n}` declared twice")));
            }
        }
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for (from, tos) in &self.edges {
            let a = *seen.get(from.as_str()).ok_or_else(|| SandboxError::UnknownModule(from.clone()))?;
            for to in tos {
                let b = *seen.get(to.as_str()).ok_or_else(|| SandboxError::UnknownModule(to.clone()))?;
                if !succ[a].contains(&b) {
                    succ[a].push(b);
                }
            }
        }
        Ok(succ)
    }
}

/// Topological order of node indices. Among ready nodes the one declared
/// first runs first.
pub fn validate_flow(graph: &FlowGraph) -> Result<Vec<usize>, SandboxError> {
    let succ = graph.successors()?;
    let n = graph.nodes.len();
    let mut indeg = vec![0usize; n];
    for s in &succ {
        for &b in s {
            indeg[b] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &b in &succ[i] {
            indeg[b] -= 1;
            if indeg[b] == 0 {
                ready.push(Reverse(b));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }

    // Every leftover node has a leftover predecessor, so walking backwards
    // must revisit a node; the edge closing that loop lies on a cycle.
    let mut pred = vec![None; n];
    for (a, s) in succ.iter().enumerate() {
        for &b in s {
            if indeg[a] > 0 && indeg[b] > 0 && pred[b].is_none() {
                pred[b] = Some(a);
            }
        }
    }
    let start = (0..n).find(|&i| indeg[i] > 0).expect("leftover node");
    let mut visited = vec![false; n];
    let mut cur = start;
    while !visited[cur] {
        visited[cur] = true;
        cur = pred[cur].expect("leftover nodes have leftover predecessors");
    }
    let p = pred[cur].unwrap();
    Err(SandboxError::Cycle { from: graph.nodes[p].clone(), to: graph.nodes[cur].clone() })
}

/// Predecessor indices per node, each list in evaluation order.
pub fn predecessors(graph: &FlowGraph, order: &[usize]) -> Result<Vec<Vec<usize>>, SandboxError> {
    let succ = graph.successors()?;
    let mut rank = vec![0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut preds = vec![Vec::new(); graph.nodes.len()];
    for (a, s) in succ.iter().enumerate() {
        for &b in s {
            preds[b].push(a);
        }
    }
    for p in &mut preds {
        p.sort_by_key(|&i| rank[i]);
    }
    Ok(preds)
}
