//! From a reduced score matrix to typed span ↔ unit alignments.
//!
//! Each unit's decoder rows are summed, the argmax over sentence words picks
//! a word, and the word's span becomes the unit's alignment. Structural rules
//! then override special structures, and the map is typed into subgraph,
//! duplicate, relation and reentrancy records.

mod format;

pub use format::{read_alignments, write_alignments};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{MatrixError, TokenError};
use crate::graph::{AmrGraph, GraphPosMap, Linearization, UnitId};
use crate::matrix::{merge_unit_rows, ScoreMatrix};
use crate::rules::{apply_fixed_matches, fixed_matches, RuleSet, SpanScores};
use crate::segment::{SentenceTokens, SpanList};

/// Alignment standard: flat unit/span pairs or typed records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Standard {
    Isi,
    Leamr,
}

impl FromStr for Standard {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "isi" => Ok(Standard::Isi),
            "leamr" => Ok(Standard::Leamr),
            _ => Err(format!("unknown alignment standard `{s}` (isi or leamr)")),
        }
    }
}

impl fmt::Display for Standard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Standard::Isi => "isi",
            Standard::Leamr => "leamr",
        })
    }
}

/// Span index of every aligned unit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentMap {
    pub entries: BTreeMap<UnitId, usize>,
    /// Span of each re-mention, keyed by the reentrant edge that carries it.
    pub mentions: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentKind {
    Subgraph,
    Duplicate,
    Relation,
    Reentrancy,
}

impl AlignmentKind {
    pub const ALL: [AlignmentKind; 4] =
        [AlignmentKind::Subgraph, AlignmentKind::Duplicate, AlignmentKind::Relation, AlignmentKind::Reentrancy];

    pub fn name(self) -> &'static str {
        match self {
            AlignmentKind::Subgraph => "subgraph",
            AlignmentKind::Duplicate => "duplicate",
            AlignmentKind::Relation => "relation",
            AlignmentKind::Reentrancy => "reentrancy",
        }
    }
}

/// One alignment: a span (as word indices) and the units aligned to it,
/// addressed by path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    #[serde(rename = "type")]
    pub kind: AlignmentKind,
    pub tokens: Vec<usize>,
    #[serde(default)]
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<String>,
    /// For reentrancies: which re-mention of the node (1 = first re-mention).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention: Option<usize>,
}

impl AlignmentRecord {
    /// Node and edge addresses together.
    pub fn units(&self) -> BTreeSet<&str> {
        self.nodes.iter().chain(&self.edges).map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSet {
    pub sentence_id: String,
    pub standard: Standard,
    pub records: Vec<AlignmentRecord>,
}

impl AlignmentSet {
    pub fn new(sentence_id: impl Into<String>, standard: Standard) -> Self {
        AlignmentSet { sentence_id: sentence_id.into(), standard, records: Vec::new() }
    }

    pub fn of_kind(&self, kind: AlignmentKind) -> impl Iterator<Item = &AlignmentRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn subgraph(&self) -> impl Iterator<Item = &AlignmentRecord> {
        self.of_kind(AlignmentKind::Subgraph)
    }

    pub fn duplicate(&self) -> impl Iterator<Item = &AlignmentRecord> {
        self.of_kind(AlignmentKind::Duplicate)
    }

    pub fn relation(&self) -> impl Iterator<Item = &AlignmentRecord> {
        self.of_kind(AlignmentKind::Relation)
    }

    pub fn reentrancy(&self) -> impl Iterator<Item = &AlignmentRecord> {
        self.of_kind(AlignmentKind::Reentrancy)
    }

    /// Addresses of every aligned unit.
    pub fn aligned_units(&self) -> BTreeSet<&str> {
        self.records.iter().flat_map(|r| r.units()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub standard: Standard,
    pub rules: RuleSet,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { standard: Standard::Leamr, rules: RuleSet::all() }
    }
}

/// Index of the largest value, lowest index on ties. `None` for an empty row.
pub fn argmax(row: ArrayView1<'_, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in row.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Span containing `word`.
pub fn select_span(spans: &SpanList, word: usize) -> Result<usize, TokenError> {
    spans.select_span(word)
}

/// Score-based alignment map: per unit, the span of the argmax word of its
/// summed rows; per reentrant edge, the span of the argmax word of its
/// pointer re-mention rows. `m` must have one column per word.
pub fn argmax_alignments(
    spans: &SpanList,
    lin: &Linearization,
    gp: &GraphPosMap,
    m: &ScoreMatrix,
) -> Result<(AlignmentMap, SpanScores), MatrixError> {
    if m.values.ncols() != spans.word_count() {
        return Err(MatrixError::Dimension(format!(
            "matrix has {} columns, sentence has {} words",
            m.values.ncols(),
            spans.word_count()
        )));
    }
    let us = merge_unit_rows(m, gp)?;
    let mut map = AlignmentMap::default();
    if m.values.ncols() == 0 {
        return Ok((map, SpanScores::from_unit_scores(&us, spans)));
    }
    for (r, unit) in us.units.iter().enumerate() {
        let w = argmax(us.matrix.values.row(r)).expect("non-empty row");
        map.entries.insert(*unit, spans.select_span(w)?);
    }
    let mut mention_rows: BTreeMap<usize, ndarray::Array1<f64>> = BTreeMap::new();
    for (row, t) in gp.lin_tokens.iter().enumerate() {
        let Some(edge) = t.and_then(|t| lin.mention_of_token.get(t).copied().flatten()) else { continue };
        let acc = mention_rows.entry(edge).or_insert_with(|| ndarray::Array1::zeros(m.values.ncols()));
        *acc += &m.values.row(row);
    }
    for (edge, row) in mention_rows {
        let w = argmax(row.view()).expect("non-empty row");
        map.mentions.insert(edge, spans.select_span(w)?);
    }
    Ok((map, SpanScores::from_unit_scores(&us, spans)))
}

/// The whole extraction: argmax alignment, rule layer, typing.
#[allow(clippy::too_many_arguments)]
pub fn extract_alignments(
    sentence_id: &str,
    st: &SentenceTokens,
    spans: &SpanList,
    lin: &Linearization,
    gp: &GraphPosMap,
    m: &ScoreMatrix,
    g: &AmrGraph,
    cfg: &ExtractConfig,
) -> Result<AlignmentSet, MatrixError> {
    if st.words.len() != spans.word_count() {
        return Err(MatrixError::Dimension(format!(
            "{} words but spans cover {}",
            st.words.len(),
            spans.word_count()
        )));
    }
    if lin.len() != lin.unit_of_token.len() || gp.lin_tokens.iter().flatten().any(|&t| t >= lin.len()) {
        return Err(MatrixError::Dimension("position map refers past the linearization".into()));
    }
    let (mut map, scores) = argmax_alignments(spans, lin, gp, m)?;
    if map.entries.is_empty() {
        return Ok(AlignmentSet::new(sentence_id, cfg.standard));
    }
    // Units without any decoder token (a truncated stream) take the root's span.
    if let Some(&root_span) = map.entries.get(&UnitId::Node(g.root())) {
        let missing: Vec<UnitId> = (0..g.nodes().len())
            .map(UnitId::Node)
            .chain((0..g.edges().len()).map(UnitId::Edge))
            .filter(|u| !map.entries.contains_key(u))
            .collect();
        for u in missing {
            log::debug!("{sentence_id}: unit {u} has no decoder token, using the root span");
            map.entries.insert(u, root_span);
        }
    }
    if !cfg.rules.is_empty() {
        let fm = fixed_matches(g, spans, &st.words, &cfg.rules, Some(&scores));
        map = apply_fixed_matches(&map, &fm, g);
    }
    Ok(classify_alignments(sentence_id, &map, g, spans, cfg.standard))
}

fn span_tokens(spans: &SpanList, s: usize) -> Vec<usize> {
    spans.spans[s].words().collect()
}

/// Types an alignment map.
///
/// LEAMR: nodes sharing a span and connected in the graph form one subgraph
/// record (with the non-reentrant edges between them); a later subgraph with
/// the same concept multiset on another span is a duplicate; every other edge
/// is a relation record; every re-mention of a node is a reentrancy record.
/// ISI: one flat record per aligned unit.
pub fn classify_alignments(
    sentence_id: &str,
    am: &AlignmentMap,
    g: &AmrGraph,
    spans: &SpanList,
    standard: Standard,
) -> AlignmentSet {
    let paths = g.unit_paths();
    let mut set = AlignmentSet::new(sentence_id, standard);
    if standard == Standard::Isi {
        for (unit, &s) in &am.entries {
            let (nodes, edges, kind) = match unit {
                UnitId::Node(_) => (vec![paths[unit].clone()], vec![], AlignmentKind::Subgraph),
                UnitId::Edge(_) => (vec![], vec![paths[unit].clone()], AlignmentKind::Relation),
            };
            set.records.push(AlignmentRecord { kind, tokens: span_tokens(spans, s), nodes, edges, mention: None });
        }
        return set;
    }

    // Connected components of same-span nodes, in order of their first node.
    let n = g.nodes().len();
    let mut component = vec![usize::MAX; n];
    let mut components: Vec<(usize, Vec<usize>)> = Vec::new();
    for start in 0..n {
        let Some(&s) = am.entries.get(&UnitId::Node(start)) else { continue };
        if component[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component[start] = id;
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for (_, y) in g.neighbours(x) {
                if component[y] == usize::MAX && am.entries.get(&UnitId::Node(y)) == Some(&s) {
                    component[y] = id;
                    members.push(y);
                    stack.push(y);
                }
            }
        }
        members.sort_unstable();
        components.push((s, members));
    }

    let internal: Vec<bool> = g
        .edges()
        .iter()
        .map(|e| {
            !e.reentrant && component[e.source] != usize::MAX && component[e.source] == component[e.target]
        })
        .collect();

    let mut seen: Vec<(Vec<&str>, usize)> = Vec::new();
    for (id, (s, members)) in components.iter().enumerate() {
        let mut concepts: Vec<&str> = members.iter().map(|&i| g.node(i).concept.as_str()).collect();
        concepts.sort_unstable();
        let kind = if seen.iter().any(|(c, span)| *c == concepts && span != s) {
            AlignmentKind::Duplicate
        } else {
            AlignmentKind::Subgraph
        };
        seen.push((concepts, *s));
        let edges = (0..g.edges().len())
            .filter(|&e| internal[e] && component[g.edge(e).source] == id)
            .map(|e| paths[&UnitId::Edge(e)].clone())
            .collect();
        set.records.push(AlignmentRecord {
            kind,
            tokens: span_tokens(spans, *s),
            nodes: members.iter().map(|&i| paths[&UnitId::Node(i)].clone()).collect(),
            edges,
            mention: None,
        });
    }

    for (e, _) in g.edges().iter().enumerate() {
        if internal[e] {
            continue;
        }
        if let Some(&s) = am.entries.get(&UnitId::Edge(e)) {
            set.records.push(AlignmentRecord {
                kind: AlignmentKind::Relation,
                tokens: span_tokens(spans, s),
                nodes: vec![],
                edges: vec![paths[&UnitId::Edge(e)].clone()],
                mention: None,
            });
        }
    }

    let mut mention_count: BTreeMap<usize, usize> = BTreeMap::new();
    for (e, edge) in g.edges().iter().enumerate() {
        if !edge.reentrant {
            continue;
        }
        let k = mention_count.entry(edge.target).or_default();
        *k += 1;
        let span = am.mentions.get(&e).or_else(|| am.entries.get(&UnitId::Node(edge.target)));
        if let Some(&s) = span {
            set.records.push(AlignmentRecord {
                kind: AlignmentKind::Reentrancy,
                tokens: span_tokens(spans, s),
                nodes: vec![paths[&UnitId::Node(edge.target)].clone()],
                edges: vec![paths[&UnitId::Edge(e)].clone()],
                mention: Some(*k),
            });
        }
    }
    set
}
