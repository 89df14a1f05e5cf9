use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AmrGraph, Edge, Node, NodeKind, UnitId, CONSTANT_VAR_PREFIX};
use crate::error::TokenError;
use crate::tokens;

/// DFS token sequence of a graph with pointer tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linearization {
    pub tokens: Vec<String>,
    /// Unit owning each token; parentheses map to `None`.
    pub unit_of_token: Vec<Option<UnitId>>,
    /// For bare pointer tokens (re-mentions), the reentrant edge they realise.
    pub mention_of_token: Vec<Option<usize>>,
    /// Variable behind `<pointer:k>`.
    pub pointer_vars: Vec<String>,
}

pub fn pointer_token(k: usize) -> String {
    format!("<pointer:{k}>")
}

fn parse_pointer(token: &str) -> Option<usize> {
    token.strip_prefix("<pointer:")?.strip_suffix('>')?.parse().ok()
}

impl Linearization {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token indices owned by `unit`.
    pub fn tokens_of(&self, unit: UnitId) -> Vec<usize> {
        self.unit_of_token
            .iter()
            .enumerate()
            .filter(|(_, u)| **u == Some(unit))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

struct Linearizer<'g> {
    g: &'g AmrGraph,
    pointer_of: HashMap<usize, usize>,
    out: Linearization,
}

impl Linearizer<'_> {
    fn push(&mut self, tok: String, unit: Option<UnitId>, mention: Option<usize>) {
        self.out.tokens.push(tok);
        self.out.unit_of_token.push(unit);
        self.out.mention_of_token.push(mention);
    }

    fn pointer(&mut self, node: usize) -> String {
        let next = self.pointer_of.len();
        let k = *self.pointer_of.entry(node).or_insert_with(|| {
            self.out.pointer_vars.push(self.g.node(node).var.clone());
            next
        });
        pointer_token(k)
    }

    fn node(&mut self, node: usize) {
        let unit = Some(UnitId::Node(node));
        self.push("(".into(), None, None);
        let p = self.pointer(node);
        self.push(p, unit, None);
        self.push(self.g.node(node).concept.clone(), unit, None);
        let children: Vec<usize> = self.g.children(node).collect();
        for ei in children {
            let e = self.g.edge(ei);
            self.push(e.label.clone(), Some(UnitId::Edge(ei)), None);
            let target = self.g.node(e.target);
            if e.reentrant {
                let p = self.pointer(e.target);
                self.push(p, Some(UnitId::Node(e.target)), Some(ei));
            } else if target.kind == NodeKind::Constant {
                self.push(target.concept.clone(), Some(UnitId::Node(e.target)), None);
            } else {
                self.node(e.target);
            }
        }
        self.push(")".into(), None, None);
    }
}

/// Depth-first linearization from the root. The first mention of a node
/// opens `( <pointer:k> concept`, later mentions are the bare pointer token;
/// `k` counts nodes in discovery order.
pub fn linearize(g: &AmrGraph) -> Linearization {
    let mut l = Linearizer {
        g,
        pointer_of: HashMap::new(),
        out: Linearization {
            tokens: Vec::new(),
            unit_of_token: Vec::new(),
            mention_of_token: Vec::new(),
            pointer_vars: Vec::new(),
        },
    };
    l.node(g.root());
    l.out
}

struct Delinearizer<'a> {
    lin: &'a Linearization,
    pos: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_of_pointer: HashMap<usize, usize>,
    /// Pointers referenced before their definition: (edge, pointer).
    forward: Vec<(usize, usize)>,
    constants: usize,
}

impl Delinearizer<'_> {
    fn err(&self, msg: &str) -> TokenError {
        TokenError::Malformed { offset: self.pos, message: msg.to_string() }
    }

    fn next(&mut self) -> Result<&str, TokenError> {
        let t = self.lin.tokens.get(self.pos).ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        Ok(t)
    }

    fn var_of(&self, k: usize) -> Result<String, TokenError> {
        self.lin
            .pointer_vars
            .get(k)
            .cloned()
            .ok_or_else(|| self.err("pointer without variable"))
    }

    fn node(&mut self) -> Result<usize, TokenError> {
        let k = parse_pointer(self.next()?).ok_or_else(|| self.err("expected pointer"))?;
        if self.node_of_pointer.contains_key(&k) {
            return Err(self.err("pointer defined twice"));
        }
        let concept = self.next()?.to_string();
        let idx = self.nodes.len();
        self.nodes.push(Node { var: self.var_of(k)?, concept, kind: NodeKind::Concept });
        self.node_of_pointer.insert(k, idx);
        loop {
            let tok = self.next()?.to_string();
            if tok == ")" {
                return Ok(idx);
            }
            if !tok.starts_with(':') {
                return Err(self.err("expected relation"));
            }
            let ei = self.edges.len();
            self.edges.push(Edge { source: idx, label: tok, target: usize::MAX, reentrant: false });
            let tok = self.next()?.to_string();
            if tok == "(" {
                let child = self.node()?;
                self.edges[ei].target = child;
            } else if let Some(k) = parse_pointer(&tok) {
                self.edges[ei].reentrant = true;
                match self.node_of_pointer.get(&k) {
                    Some(&n) => self.edges[ei].target = n,
                    None => self.forward.push((ei, k)),
                }
            } else {
                let c = self.nodes.len();
                let var = format!("{CONSTANT_VAR_PREFIX}{}", self.constants);
                self.constants += 1;
                self.nodes.push(Node { var, concept: tok, kind: NodeKind::Constant });
                self.edges[ei].target = c;
            }
        }
    }
}

/// Rebuilds the graph a [`Linearization`] was produced from.
pub fn delinearize(lin: &Linearization) -> Result<AmrGraph, TokenError> {
    let mut d = Delinearizer {
        lin,
        pos: 0,
        nodes: Vec::new(),
        edges: Vec::new(),
        node_of_pointer: HashMap::new(),
        forward: Vec::new(),
        constants: 0,
    };
    if d.next()? != "(" {
        return Err(d.err("expected `(`"));
    }
    let root = d.node()?;
    if d.pos != lin.tokens.len() {
        return Err(d.err("trailing tokens"));
    }
    for (ei, k) in std::mem::take(&mut d.forward) {
        d.edges[ei].target =
            *d.node_of_pointer.get(&k).ok_or_else(|| d.err("undefined pointer"))?;
    }
    Ok(AmrGraph::from_parts(d.nodes, d.edges, root))
}

/// Decoder-token index to semantic unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphPosMap {
    pub units: Vec<Option<UnitId>>,
    /// Linearization token each decoder token was attributed to.
    pub lin_tokens: Vec<Option<usize>>,
}

impl GraphPosMap {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Units in order of first decoder token.
    pub fn units_in_order(&self) -> Vec<UnitId> {
        let mut seen = Vec::new();
        for u in self.units.iter().flatten() {
            if !seen.contains(u) {
                seen.push(*u);
            }
        }
        seen
    }

    /// Identity map over the linearization tokens themselves.
    pub fn identity(lin: &Linearization) -> Self {
        GraphPosMap {
            units: lin.unit_of_token.clone(),
            lin_tokens: (0..lin.len()).map(Some).collect(),
        }
    }
}

/// Maps decoder subword tokens onto linearization tokens by character offsets.
///
/// Marker-stripped decoder tokens must concatenate to the concatenation of the
/// linearization tokens; control tokens (`<s>`, `</s>`, ...) map to `None`.
/// A decoder token spanning several linearization tokens takes the first
/// unit-bearing one.
pub fn map_output_tokens<S: AsRef<str>>(
    lin: &Linearization,
    decoder_tokens: &[S],
) -> Result<GraphPosMap, TokenError> {
    let surfaces: Vec<&str> = decoder_tokens.iter().map(|t| tokens::surface(t.as_ref())).collect();
    let ranges = tokens::reconcile(&surfaces, &lin.tokens)
        .map_err(|offset| TokenError::StreamMismatch { offset })?;
    let mut units = Vec::with_capacity(ranges.len());
    let mut lin_tokens = Vec::with_capacity(ranges.len());
    for r in ranges {
        let picked = r.map(|(a, b)| (a..=b).find(|&i| lin.unit_of_token[i].is_some()).unwrap_or(a));
        units.push(picked.and_then(|i| lin.unit_of_token[i]));
        lin_tokens.push(picked);
    }
    Ok(GraphPosMap { units, lin_tokens })
}
