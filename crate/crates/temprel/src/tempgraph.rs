//! Labeled temporal graphs over events: the composition table for relations
//! over start points, transitive closure, graph reduction and consistency
//! checking. These back both the global inference constraints and the
//! awareness metric.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

/// Labels permitted on (i, k) given `r1` on (i, j) and `r2` on (j, k).
///
/// Point-order semantics over event start points: BEFORE/AFTER/EQUAL chains
/// compose to a unique label; any composition involving VAGUE, or the
/// opposing pair (BEFORE, AFTER), leaves the third pair unconstrained.
pub fn compose(r1: Label, r2: Label) -> &'static [Label] {
    use Label::*;
    const ALL: &[Label] = &[Before, After, Equal, Vague];
    match (r1, r2) {
        (Before, Before) | (Before, Equal) | (Equal, Before) => &[Before],
        (After, After) | (After, Equal) | (Equal, After) => &[After],
        (Equal, Equal) => &[Equal],
        _ => ALL,
    }
}

/// An event graph with at most one label per unordered pair. Edges are
/// stored with endpoints in lexicographic order; querying the opposite
/// direction applies [`Label::reverse`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemporalGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), Label>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("self-loop on node {0:?}")]
    SelfLoop(String),
    #[error("conflicting labels for pair ({0:?}, {1:?})")]
    ConflictingEdge(String, String),
    #[error("graph is inconsistent: {0}")]
    Inconsistent(Inconsistency),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad graph file: {0}")]
    Format(String),
}

/// A transitivity conflict found during closure, naming the triple whose
/// composed label disagrees with the stored one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Inconsistency {
    pub a: String,
    pub b: String,
    pub c: String,
    pub derived: Label,
    pub existing: Label,
}

impl std::fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "triple ({}, {}, {}) derives {} but ({}, {}) is {}",
            self.a, self.b, self.c, self.derived, self.a, self.c, self.existing
        )
    }
}

impl TemporalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>) {
        self.nodes.insert(id.into());
    }

    /// Inserts or overwrites the label on an unordered pair.
    pub fn set_edge(&mut self, a: &str, b: &str, label: Label) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a.to_string()));
        }
        self.nodes.insert(a.to_string());
        self.nodes.insert(b.to_string());
        let (key, label) = canonical(a, b, label);
        self.edges.insert(key, label);
        Ok(())
    }

    /// Like [`set_edge`](Self::set_edge) but errors on a differing existing label.
    pub fn add_edge(&mut self, a: &str, b: &str, label: Label) -> Result<(), GraphError> {
        if let Some(existing) = self.get(a, b) {
            if existing != label {
                return Err(GraphError::ConflictingEdge(a.to_string(), b.to_string()));
            }
        }
        self.set_edge(a, b, label)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<Label> {
        if a <= b {
            self.edges.get(&(a.to_string(), b.to_string())).copied()
        } else {
            self.edges
                .get(&(b.to_string(), a.to_string()))
                .map(|l| l.reverse())
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|s| s.as_str())
    }

    /// Edges in canonical (src, dst) order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, Label)> {
        self.edges.iter().map(|((a, b), l)| (a.as_str(), b.as_str(), *l))
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Non-VAGUE edges in canonical order.
    pub fn definite_edges(&self) -> impl Iterator<Item = (&str, &str, Label)> {
        self.edges().filter(|(_, _, l)| *l != Label::Vague)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

fn canonical(a: &str, b: &str, label: Label) -> ((String, String), Label) {
    if a <= b {
        ((a.to_string(), b.to_string()), label)
    } else {
        ((b.to_string(), a.to_string()), label.reverse())
    }
}

/// Transitive closure: repeatedly, for each path (a,b),(b,c) whose non-VAGUE
/// labels compose to a unique label, adds (a,c) with that label until
/// fixpoint. A derived label clashing with an existing different non-VAGUE
/// label is an inconsistency; an existing VAGUE label carries no constraint
/// and is overwritten.
pub fn closure(graph: &TemporalGraph) -> Result<TemporalGraph, Inconsistency> {
    let mut g = graph.clone();
    let nodes: Vec<String> = g.nodes.iter().cloned().collect();
    loop {
        let mut changed = false;
        for a in &nodes {
            for b in &nodes {
                if a == b {
                    continue;
                }
                let Some(r1) = g.get(a, b) else { continue };
                if r1 == Label::Vague {
                    continue;
                }
                for c in &nodes {
                    if c == a || c == b {
                        continue;
                    }
                    let Some(r2) = g.get(b, c) else { continue };
                    if r2 == Label::Vague {
                        continue;
                    }
                    let composed = compose(r1, r2);
                    if composed.len() != 1 {
                        continue;
                    }
                    let derived = composed[0];
                    match g.get(a, c) {
                        Some(existing) if existing == derived => {}
                        Some(Label::Vague) | None => {
                            g.set_edge(a, c, derived).expect("a != c");
                            changed = true;
                        }
                        Some(existing) => {
                            return Err(Inconsistency {
                                a: a.clone(),
                                b: b.clone(),
                                c: c.clone(),
                                derived,
                                existing,
                            });
                        }
                    }
                }
            }
        }
        if !changed {
            return Ok(g);
        }
    }
}

/// Graph reduction: drops VAGUE edges, then walks the remaining edges in
/// canonical order removing each edge that the rest of the graph re-derives.
/// The closure of the result contains every original non-VAGUE edge.
pub fn reduce(graph: &TemporalGraph) -> Result<TemporalGraph, Inconsistency> {
    closure(graph)?; // reject inconsistent input
    let mut g = TemporalGraph::new();
    for n in graph.nodes() {
        g.add_node(n);
    }
    for (a, b, l) in graph.definite_edges() {
        g.set_edge(a, b, l).expect("no self-loops in source graph");
    }
    let keys: Vec<(String, String)> = g.edges.keys().cloned().collect();
    for key in keys {
        let label = g.edges[&key];
        g.edges.remove(&key);
        let re_derived = closure(&g)
            .expect("removing an edge keeps a consistent graph consistent")
            .get(&key.0, &key.1)
            == Some(label);
        if !re_derived {
            g.edges.insert(key, label);
        }
    }
    Ok(g)
}

pub fn is_consistent(graph: &TemporalGraph) -> bool {
    closure(graph).is_ok()
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<GraphEdge>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphEdge {
    src: String,
    dst: String,
    label: Label,
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<TemporalGraph, GraphError> {
    let text = std::fs::read_to_string(path)?;
    let file: GraphFile =
        serde_json::from_str(&text).map_err(|e| GraphError::Format(e.to_string()))?;
    let mut g = TemporalGraph::new();
    for n in file.nodes {
        g.add_node(n);
    }
    for e in file.edges {
        g.add_edge(&e.src, &e.dst, e.label)?;
    }
    Ok(g)
}

pub fn save_graph(graph: &TemporalGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let file = GraphFile {
        nodes: graph.nodes().map(str::to_string).collect(),
        edges: graph
            .edges()
            .map(|(a, b, l)| GraphEdge {
                src: a.to_string(),
                dst: b.to_string(),
                label: l,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| GraphError::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
