//! AMR graphs: representation, Penman I/O, semantic units and linearization.
//!
//! Nodes and edges are stored in the order they appear in the Penman text.
//! Attribute constants (numbers, strings, polarity `-`) are stored as nodes
//! of kind [`NodeKind::Constant`] with synthetic variables, so that every
//! alignable item of the graph is either a node or an edge.

mod linearize;
mod penman;

pub use linearize::{delinearize, linearize, map_output_tokens, GraphPosMap, Linearization};
pub use penman::{
    parse_penman, read_amr_corpus, serialize_penman, write_amr_corpus, AmrEntry, PenmanError,
    PenmanErrorKind,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use std::fmt;

/// Prefix used for synthetic variables of constant nodes.
pub(crate) const CONSTANT_VAR_PREFIX: &str = "_c";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Concept,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub var: String,
    /// Concept label, or the verbatim constant text (quotes included) for constants.
    pub concept: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Index of the node the relation is written under.
    pub source: usize,
    /// Relation label as written, `-of` inversions included (e.g. `:ARG0-of`).
    pub label: String,
    pub target: usize,
    /// `true` when the target is mentioned by variable instead of being defined here.
    pub reentrant: bool,
}

/// Identifier of a semantic unit: an index into the graph's nodes or edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitId {
    Node(usize),
    Edge(usize),
}

impl UnitId {
    pub fn is_node(self) -> bool {
        matches!(self, UnitId::Node(_))
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitId::Node(i) => write!(f, "n{i}"),
            UnitId::Edge(i) => write!(f, "e{i}"),
        }
    }
}

/// A node or relation of the graph together with its dotted path address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticUnit {
    pub id: UnitId,
    /// Dotted address: root is `0`, the k-th child slot of `p` is `p.k`,
    /// and the relation filling that slot is `p.k.r`.
    pub path: String,
    /// Concept for nodes, `source label target` triple for relations.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmrGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: usize,
}

impl AmrGraph {
    /// Builds a graph from parts, checking indices. Node 0 need not be the root.
    pub(crate) fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>, root: usize) -> Self {
        debug_assert!(root < nodes.len());
        debug_assert!(edges.iter().all(|e| e.source < nodes.len() && e.target < nodes.len()));
        AmrGraph { nodes, edges, root }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn node_index(&self, var: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.var == var)
    }

    /// Number of semantic units (nodes plus edges).
    pub fn unit_count(&self) -> usize {
        self.nodes.len() + self.edges.len()
    }

    /// Attribute view: `(source var, label, constant text)` for every constant.
    pub fn attributes(&self) -> Vec<(&str, &str, &str)> {
        self.edges
            .iter()
            .filter(|e| self.nodes[e.target].kind == NodeKind::Constant)
            .map(|e| {
                (
                    self.nodes[e.source].var.as_str(),
                    e.label.as_str(),
                    self.nodes[e.target].concept.as_str(),
                )
            })
            .collect()
    }

    /// Indices of edges written under `node`, in parse order.
    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.source == node)
            .map(|(i, _)| i)
    }

    /// The edge that defines `node` (None for the root).
    pub fn defining_edge(&self, node: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.target == node && !e.reentrant)
    }

    /// Number of times each node is mentioned as an edge target.
    pub fn in_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.target] += 1;
        }
        deg
    }

    /// Nodes referenced by two or more edges.
    pub fn reentrant_nodes(&self) -> Vec<usize> {
        self.in_degree()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d >= 2)
            .map(|(i, _)| i)
            .collect()
    }

    /// Every node and edge as a [`SemanticUnit`], nodes first, each in parse order.
    pub fn enumerate_units(&self) -> Vec<SemanticUnit> {
        let paths = self.unit_paths();
        let mut units = Vec::with_capacity(self.unit_count());
        for (i, n) in self.nodes.iter().enumerate() {
            let id = UnitId::Node(i);
            units.push(SemanticUnit { id, path: paths[&id].clone(), label: n.concept.clone() });
        }
        for (i, e) in self.edges.iter().enumerate() {
            let id = UnitId::Edge(i);
            let label = format!(
                "{} {} {}",
                self.nodes[e.source].var, e.label, self.nodes[e.target].var
            );
            units.push(SemanticUnit { id, path: paths[&id].clone(), label });
        }
        units
    }

    /// Path address of every unit.
    pub fn unit_paths(&self) -> BTreeMap<UnitId, String> {
        let mut paths = BTreeMap::new();
        let mut stack = vec![(self.root, "0".to_string())];
        paths.insert(UnitId::Node(self.root), "0".to_string());
        while let Some((node, addr)) = stack.pop() {
            let mut children = Vec::new();
            for (k, ei) in self.children(node).enumerate() {
                let slot = format!("{addr}.{k}");
                paths.insert(UnitId::Edge(ei), format!("{slot}.r"));
                let e = &self.edges[ei];
                if !e.reentrant {
                    paths.insert(UnitId::Node(e.target), slot.clone());
                    children.push((e.target, slot));
                }
            }
            stack.extend(children.into_iter().rev());
        }
        paths
    }

    /// Inverse of [`AmrGraph::unit_paths`].
    pub fn unit_by_path(&self) -> BTreeMap<String, UnitId> {
        self.unit_paths().into_iter().map(|(id, p)| (p, id)).collect()
    }

    /// Undirected node adjacency (ignores edge direction and `-of` inversion).
    pub fn neighbours(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().enumerate().filter_map(move |(i, e)| {
            if e.source == node {
                Some((i, e.target))
            } else if e.target == node {
                Some((i, e.source))
            } else {
                None
            }
        })
    }

    /// Graph diameter bound used to cap fixpoint iteration.
    pub fn depth(&self) -> usize {
        self.unit_paths()
            .iter()
            .filter(|(id, _)| id.is_node())
            .map(|(_, p)| p.split('.').count())
            .max()
            .unwrap_or(1)
    }
}
