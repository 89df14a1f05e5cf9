//! Structural alignment rules applied on top of score-based alignments.
//!
//! Subgraph rules: role-91 frames take the alignment of their role child,
//! named-entity and date subgraphs are aligned as a whole to their surface
//! form, `amr-unknown` goes to a question mark. Relation rules: `:condition`
//! to "if", `:purpose` to "to", `:ARGn` from the parent and `:ARGn-of` from
//! the child, `:mod`/`:duration` from the child, `:domain`/`:opN` from the
//! parent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::extract::AlignmentMap;
use crate::graph::{AmrGraph, NodeKind, UnitId};
use crate::matrix::UnitScores;
use crate::segment::SpanList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    /// r1: `have-org-role-91` / `have-rel-role-91` inherit from the role child.
    RoleFrame,
    /// r2: named-entity (and date) subgraphs aligned whole to their surface form.
    NamedEntity,
    /// r3: `amr-unknown` aligned to "?".
    Unknown,
    /// r4: `:condition` aligned to "if".
    Condition,
    /// r5: `:purpose` aligned to "to".
    Purpose,
    /// r6: `:ARGn` from the parent, `:ARGn-of` from the child.
    Arguments,
    /// r7: `:mod`, `:duration` from the child.
    ModDuration,
    /// r8: `:domain`, `:opN` from the parent.
    DomainOp,
}

impl Rule {
    pub const ALL: [Rule; 8] = [
        Rule::RoleFrame,
        Rule::NamedEntity,
        Rule::Unknown,
        Rule::Condition,
        Rule::Purpose,
        Rule::Arguments,
        Rule::ModDuration,
        Rule::DomainOp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::RoleFrame => "r1",
            Rule::NamedEntity => "r2",
            Rule::Unknown => "r3",
            Rule::Condition => "r4",
            Rule::Purpose => "r5",
            Rule::Arguments => "r6",
            Rule::ModDuration => "r7",
            Rule::DomainOp => "r8",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .ok_or_else(|| format!("unknown rule `{s}` (expected r1..r8)"))
    }
}

/// Enabled rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet(BTreeSet<Rule>);

impl RuleSet {
    pub fn all() -> Self {
        RuleSet(Rule::ALL.into_iter().collect())
    }

    pub fn none() -> Self {
        RuleSet(BTreeSet::new())
    }

    pub fn contains(&self, r: Rule) -> bool {
        self.0.contains(&r)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::all()
    }
}

impl FromStr for RuleSet {
    type Err = String;

    /// Comma-separated rule names, e.g. `r1,r2,r6`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<BTreeSet<_>, _>>()
            .map(RuleSet)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    AlignToSpan(usize),
    /// Take the final alignment of the given parent unit.
    InheritParent(UnitId),
    /// Take the final alignment of the given child unit.
    InheritChild(UnitId),
    /// Align every unit to one span: the literal match when found, otherwise
    /// the majority span of the anchors' score-based alignments.
    AlignWholeSubgraph { units: Vec<UnitId>, anchors: Vec<UnitId>, span: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedMatch {
    pub unit: UnitId,
    pub rule: Rule,
    pub directive: Directive,
}

/// Unit-by-span scores used to choose between repeated trigger words.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScores {
    units: Vec<UnitId>,
    values: Array2<f64>,
}

impl SpanScores {
    /// Sums each unit row over the words of every span.
    pub fn from_unit_scores(us: &UnitScores, spans: &SpanList) -> Self {
        let mut values = Array2::zeros((us.units.len(), spans.len()));
        for (r, row) in us.matrix.values.rows().into_iter().enumerate() {
            for (w, v) in row.iter().enumerate() {
                if let Some(&s) = spans.span_of_word.get(w) {
                    values[[r, s]] += v;
                }
            }
        }
        SpanScores { units: us.units.clone(), values }
    }

    pub fn score(&self, unit: UnitId, span: usize) -> f64 {
        self.units
            .iter()
            .position(|u| *u == unit)
            .and_then(|r| self.values.get([r, span]).copied())
            .unwrap_or(0.0)
    }
}

fn is_arg(label: &str) -> bool {
    label.strip_prefix(":ARG").is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

fn is_arg_of(label: &str) -> bool {
    label.strip_suffix("-of").is_some_and(is_arg)
}

fn is_op(label: &str) -> bool {
    label.strip_prefix(":op").is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(s)
}

/// Picks among candidate spans the one the unit scores highest, leftmost on ties.
fn best_span(candidates: &[usize], unit: UnitId, scores: Option<&SpanScores>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &s in candidates {
        let v = scores.map_or(0.0, |sc| sc.score(unit, s));
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((s, v));
        }
    }
    best.map(|(s, _)| s)
}

fn trigger_spans(words: &[String], spans: &SpanList, trigger: &str) -> Vec<usize> {
    let mut out: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| w.eq_ignore_ascii_case(trigger))
        .filter_map(|(i, _)| spans.span_of_word.get(i).copied())
        .collect();
    out.dedup();
    out
}

/// Start words of every occurrence of `needle` as a consecutive word sequence.
fn find_sequence(words: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > words.len() {
        return Vec::new();
    }
    (0..=words.len() - needle.len())
        .filter(|&i| needle.iter().zip(&words[i..]).all(|(a, b)| a.eq_ignore_ascii_case(b)))
        .collect()
}

fn named_entity_match(
    g: &AmrGraph,
    name_edge: usize,
    spans: &SpanList,
    words: &[String],
    scores: Option<&SpanScores>,
) -> FixedMatch {
    let e = g.edge(name_edge);
    let (entity, name) = (e.source, e.target);
    let mut units = vec![UnitId::Node(entity), UnitId::Edge(name_edge), UnitId::Node(name)];
    let mut ops: Vec<(u32, usize, usize)> = g
        .children(name)
        .filter(|&ei| is_op(&g.edge(ei).label) && !g.edge(ei).reentrant)
        .map(|ei| (g.edge(ei).label[3..].parse().unwrap_or(u32::MAX), ei, g.edge(ei).target))
        .collect();
    ops.sort();
    let mut anchors = Vec::new();
    let mut surface = Vec::new();
    for &(_, ei, target) in &ops {
        units.push(UnitId::Edge(ei));
        units.push(UnitId::Node(target));
        anchors.push(UnitId::Node(target));
        surface.extend(unquote(&g.node(target).concept).split_whitespace().map(str::to_string));
    }
    let starts = find_sequence(words, &surface);
    let candidates: Vec<usize> = starts.iter().filter_map(|&w| spans.span_of_word.get(w).copied()).collect();
    let span = best_span(&candidates, UnitId::Node(entity), scores);
    FixedMatch {
        unit: UnitId::Node(entity),
        rule: Rule::NamedEntity,
        directive: Directive::AlignWholeSubgraph { units, anchors, span },
    }
}

fn date_match(
    g: &AmrGraph,
    node: usize,
    spans: &SpanList,
    words: &[String],
    scores: Option<&SpanScores>,
) -> Option<FixedMatch> {
    let mut units = vec![UnitId::Node(node)];
    let mut anchors = Vec::new();
    let mut candidates = Vec::new();
    for ei in g.children(node) {
        let e = g.edge(ei);
        if e.reentrant || g.node(e.target).kind != NodeKind::Constant {
            continue;
        }
        units.push(UnitId::Edge(ei));
        units.push(UnitId::Node(e.target));
        anchors.push(UnitId::Node(e.target));
        let text = unquote(&g.node(e.target).concept);
        candidates.extend(trigger_spans(words, spans, text));
    }
    if anchors.is_empty() {
        return None;
    }
    candidates.sort_unstable();
    candidates.dedup();
    let span = best_span(&candidates, UnitId::Node(node), scores);
    Some(FixedMatch {
        unit: UnitId::Node(node),
        rule: Rule::NamedEntity,
        directive: Directive::AlignWholeSubgraph { units, anchors, span },
    })
}

/// Collects the directives of the enabled rules. A unit receives at most one
/// directive; subgraph rules take precedence over relation rules.
pub fn fixed_matches(
    g: &AmrGraph,
    spans: &SpanList,
    words: &[String],
    rules: &RuleSet,
    scores: Option<&SpanScores>,
) -> Vec<FixedMatch> {
    let mut out: Vec<FixedMatch> = Vec::new();
    let mut claimed: BTreeSet<UnitId> = BTreeSet::new();
    let push = |fm: FixedMatch, claimed: &mut BTreeSet<UnitId>, out: &mut Vec<FixedMatch>| {
        let members = match &fm.directive {
            Directive::AlignWholeSubgraph { units, .. } => units.clone(),
            _ => vec![fm.unit],
        };
        if members.iter().any(|u| claimed.contains(u)) {
            return;
        }
        claimed.extend(members);
        out.push(fm);
    };

    if rules.contains(Rule::NamedEntity) {
        for (ei, e) in g.edges().iter().enumerate() {
            if e.label == ":name" && !e.reentrant && g.node(e.target).concept == "name" {
                push(named_entity_match(g, ei, spans, words, scores), &mut claimed, &mut out);
            }
        }
        for (ni, n) in g.nodes().iter().enumerate() {
            if n.concept == "date-entity" {
                if let Some(fm) = date_match(g, ni, spans, words, scores) {
                    push(fm, &mut claimed, &mut out);
                }
            }
        }
    }

    if rules.contains(Rule::RoleFrame) {
        for (ni, n) in g.nodes().iter().enumerate() {
            if n.concept != "have-org-role-91" && n.concept != "have-rel-role-91" {
                continue;
            }
            let role_child = g
                .children(ni)
                .find(|&ei| g.edge(ei).label == ":ARG2")
                .or_else(|| g.children(ni).find(|&ei| g.node(g.edge(ei).target).kind == NodeKind::Concept))
                .map(|ei| g.edge(ei).target);
            let Some(child) = role_child else { continue };
            let role = UnitId::Node(ni);
            push(
                FixedMatch { unit: role, rule: Rule::RoleFrame, directive: Directive::InheritChild(UnitId::Node(child)) },
                &mut claimed,
                &mut out,
            );
            // The holder of the role: `(p / person :ARG0-of (h / have-rel-role-91 ...))`.
            for e in g.edges() {
                let holder = if e.target == ni && e.label == ":ARG0-of" {
                    Some(e.source)
                } else if e.source == ni && e.label == ":ARG0" {
                    Some(e.target)
                } else {
                    None
                };
                if let Some(h) = holder {
                    if g.node(h).kind == NodeKind::Concept {
                        push(
                            FixedMatch { unit: UnitId::Node(h), rule: Rule::RoleFrame, directive: Directive::InheritChild(role) },
                            &mut claimed,
                            &mut out,
                        );
                    }
                }
            }
        }
    }

    if rules.contains(Rule::Unknown) {
        let candidates = trigger_spans(words, spans, "?");
        for (ni, n) in g.nodes().iter().enumerate() {
            if n.concept == "amr-unknown" {
                if let Some(s) = best_span(&candidates, UnitId::Node(ni), scores) {
                    push(
                        FixedMatch { unit: UnitId::Node(ni), rule: Rule::Unknown, directive: Directive::AlignToSpan(s) },
                        &mut claimed,
                        &mut out,
                    );
                }
            }
        }
    }

    for (ei, e) in g.edges().iter().enumerate() {
        let unit = UnitId::Edge(ei);
        let lexical = match e.label.as_str() {
            ":condition" if rules.contains(Rule::Condition) => Some((Rule::Condition, "if")),
            ":purpose" if rules.contains(Rule::Purpose) => Some((Rule::Purpose, "to")),
            _ => None,
        };
        if let Some((rule, word)) = lexical {
            if let Some(s) = best_span(&trigger_spans(words, spans, word), unit, scores) {
                push(FixedMatch { unit, rule, directive: Directive::AlignToSpan(s) }, &mut claimed, &mut out);
            }
            continue;
        }
        let (parent, child) = (UnitId::Node(e.source), UnitId::Node(e.target));
        let label = e.label.as_str();
        let directive = if rules.contains(Rule::Arguments) && is_arg(label) {
            Some((Rule::Arguments, Directive::InheritParent(parent)))
        } else if rules.contains(Rule::Arguments) && is_arg_of(label) {
            Some((Rule::Arguments, Directive::InheritChild(child)))
        } else if rules.contains(Rule::ModDuration) && (label == ":mod" || label == ":duration") {
            Some((Rule::ModDuration, Directive::InheritChild(child)))
        } else if rules.contains(Rule::DomainOp) && (label == ":domain" || is_op(label)) {
            Some((Rule::DomainOp, Directive::InheritParent(parent)))
        } else {
            None
        };
        if let Some((rule, directive)) = directive {
            push(FixedMatch { unit, rule, directive }, &mut claimed, &mut out);
        }
    }
    out
}

/// Majority span among the anchors' alignments, lowest span index on ties.
fn anchor_span(anchors: &[UnitId], map: &AlignmentMap) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for a in anchors {
        if let Some(&s) = map.entries.get(a) {
            *counts.entry(s).or_default() += 1;
        }
    }
    let max = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == max).map(|(s, _)| s)
}

/// Applies directives: direct span assignments and whole-subgraph alignments
/// first, then inheritance resolved to a fixpoint by following each chain to
/// a unit without an inheritance directive. Units caught in an inheritance
/// cycle keep their base alignment.
pub fn apply_fixed_matches(base: &AlignmentMap, fm: &[FixedMatch], g: &AmrGraph) -> AlignmentMap {
    let mut out = base.clone();
    let mut inherit: BTreeMap<UnitId, UnitId> = BTreeMap::new();
    for m in fm {
        match &m.directive {
            Directive::AlignToSpan(s) => {
                out.entries.insert(m.unit, *s);
            }
            Directive::AlignWholeSubgraph { units, anchors, span } => {
                if let Some(s) = span.or_else(|| anchor_span(anchors, base)) {
                    for u in units {
                        out.entries.insert(*u, s);
                    }
                }
            }
            Directive::InheritParent(from) | Directive::InheritChild(from) => {
                inherit.insert(m.unit, *from);
            }
        }
    }
    let fixed = out.clone();
    // Nodes first, then relations.
    let order = inherit.keys().copied().filter(|u| u.is_node()).chain(inherit.keys().copied().filter(|u| !u.is_node()));
    let limit = g.unit_count() + 1;
    for unit in order.collect::<Vec<_>>() {
        let mut seen = BTreeSet::from([unit]);
        let mut cur = inherit[&unit];
        let mut cyclic = false;
        while let Some(&next) = inherit.get(&cur) {
            if !seen.insert(cur) || seen.len() > limit {
                cyclic = true;
                break;
            }
            cur = next;
        }
        if cyclic {
            log::warn!("inheritance cycle through {unit}; keeping its score-based alignment");
            continue;
        }
        if let Some(&s) = fixed.entries.get(&cur) {
            out.entries.insert(unit, s);
        }
    }
    out
}
