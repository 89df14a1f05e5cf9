use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{AmrGraph, Edge, Node, NodeKind, CONSTANT_VAR_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PenmanErrorKind {
    UnbalancedParens,
    DuplicateVariable(String),
    DanglingReference(String),
    UnterminatedString,
    Unexpected(String),
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {}", describe(.kind))]
pub struct PenmanError {
    pub kind: PenmanErrorKind,
    pub line: usize,
    pub column: usize,
}

fn describe(kind: &PenmanErrorKind) -> String {
    match kind {
        PenmanErrorKind::UnbalancedParens => "unbalanced parentheses".into(),
        PenmanErrorKind::DuplicateVariable(v) => format!("variable `{v}` defined twice"),
        PenmanErrorKind::DanglingReference(v) => format!("reference to undefined variable `{v}`"),
        PenmanErrorKind::UnterminatedString => "unterminated string literal".into(),
        PenmanErrorKind::Unexpected(t) => format!("unexpected {t}"),
        PenmanErrorKind::Empty => "no graph found".into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Symbol(String),
    Str(String),
}

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Lexeme>, PenmanError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1, 1);
    let is_delim = |c: char| c.is_whitespace() || c == '(' || c == ')' || c == '"';
    while let Some(&c) = chars.peek() {
        let (l, col) = (line, column);
        let mut bump = |c: char| {
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
        };
        if c.is_whitespace() {
            chars.next();
            bump(c);
            continue;
        }
        let tok = match c {
            '(' => {
                chars.next();
                bump(c);
                Tok::Open
            }
            ')' => {
                chars.next();
                bump(c);
                Tok::Close
            }
            '"' => {
                chars.next();
                bump(c);
                let mut s = String::from('"');
                let mut closed = false;
                while let Some(c) = chars.next() {
                    bump(c);
                    s.push(c);
                    if c == '\\' {
                        if let Some(n) = chars.next() {
                            bump(n);
                            s.push(n);
                        }
                    } else if c == '"' {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(PenmanError {
                        kind: PenmanErrorKind::UnterminatedString,
                        line: l,
                        column: col,
                    });
                }
                Tok::Str(s)
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if is_delim(c) {
                        break;
                    }
                    s.push(c);
                    chars.next();
                    bump(c);
                }
                if s == "/" {
                    Tok::Slash
                } else if s.starts_with(':') && s.len() > 1 {
                    Tok::Role(s)
                } else {
                    Tok::Symbol(s)
                }
            }
        };
        out.push(Lexeme { tok, line: l, column: col });
    }
    Ok(out)
}

/// Conventional AMR variable shape (`h`, `p4`, `ab2`): an undefined symbol of
/// this shape is treated as a dangling reference rather than a constant.
fn looks_like_variable(s: &str) -> bool {
    let letters = s.chars().take_while(|c| c.is_ascii_lowercase()).count();
    let rest = &s[letters..];
    (1..=2).contains(&letters) && rest.chars().all(|c| c.is_ascii_digit())
}

struct Parser {
    lexemes: Vec<Lexeme>,
    pos: usize,
    end: (usize, usize),
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    defined: HashMap<String, usize>,
    /// (edge index, variable, line, column) for symbol targets resolved at the end.
    pending: Vec<(usize, String, usize, usize)>,
    constants: usize,
}

impl Parser {
    fn err(&self, kind: PenmanErrorKind) -> PenmanError {
        let (line, column) = self
            .lexemes
            .get(self.pos)
            .map(|l| (l.line, l.column))
            .unwrap_or(self.end);
        PenmanError { kind, line, column }
    }

    fn peek(&self) -> Option<&Tok> {
        self.lexemes.get(self.pos).map(|l| &l.tok)
    }

    fn next(&mut self) -> Result<Tok, PenmanError> {
        match self.lexemes.get(self.pos) {
            Some(l) => {
                self.pos += 1;
                Ok(l.tok.clone())
            }
            None => Err(self.err(PenmanErrorKind::UnbalancedParens)),
        }
    }

    fn unexpected(&self, what: &Tok) -> PenmanError {
        let desc = match what {
            Tok::Open => "`(`".to_string(),
            Tok::Close => "`)`".to_string(),
            Tok::Slash => "`/`".to_string(),
            Tok::Role(r) => format!("role `{r}`"),
            Tok::Symbol(s) => format!("symbol `{s}`"),
            Tok::Str(s) => format!("string {s}"),
        };
        PenmanError {
            kind: PenmanErrorKind::Unexpected(desc),
            line: self.lexemes[self.pos - 1].line,
            column: self.lexemes[self.pos - 1].column,
        }
    }

    /// Parses `( var / concept edges* )`, the opening paren already consumed.
    fn node(&mut self) -> Result<usize, PenmanError> {
        let var_pos = self.pos;
        let var = match self.next()? {
            Tok::Symbol(s) => s,
            t => return Err(self.unexpected(&t)),
        };
        if self.defined.contains_key(&var) {
            let l = &self.lexemes[var_pos];
            return Err(PenmanError {
                kind: PenmanErrorKind::DuplicateVariable(var),
                line: l.line,
                column: l.column,
            });
        }
        match self.next()? {
            Tok::Slash => {}
            t => return Err(self.unexpected(&t)),
        }
        let concept = match self.next()? {
            Tok::Symbol(s) | Tok::Str(s) => s,
            t => return Err(self.unexpected(&t)),
        };
        let idx = self.nodes.len();
        self.nodes.push(Node { var: var.clone(), concept, kind: NodeKind::Concept });
        self.defined.insert(var, idx);
        loop {
            match self.next()? {
                Tok::Close => return Ok(idx),
                Tok::Role(label) => self.edge(idx, label)?,
                t => return Err(self.unexpected(&t)),
            }
        }
    }

    fn edge(&mut self, source: usize, label: String) -> Result<(), PenmanError> {
        let edge_idx = self.edges.len();
        // Placeholder target; patched below so edges stay in preorder.
        self.edges.push(Edge { source, label, target: usize::MAX, reentrant: false });
        let at = self.pos;
        match self.next()? {
            Tok::Open => {
                let child = self.node()?;
                self.edges[edge_idx].target = child;
            }
            Tok::Str(s) => {
                let c = self.constant(s);
                self.edges[edge_idx].target = c;
            }
            Tok::Symbol(s) => {
                let l = &self.lexemes[at];
                self.pending.push((edge_idx, s, l.line, l.column));
            }
            t => return Err(self.unexpected(&t)),
        }
        Ok(())
    }

    fn constant(&mut self, text: String) -> usize {
        let idx = self.nodes.len();
        let var = format!("{CONSTANT_VAR_PREFIX}{}", self.constants);
        self.constants += 1;
        self.nodes.push(Node { var, concept: text, kind: NodeKind::Constant });
        idx
    }
}

/// Parses a single Penman graph. Comment lines starting with `#` are ignored.
pub fn parse_penman(text: &str) -> Result<AmrGraph, PenmanError> {
    let stripped: String = text
        .lines()
        .map(|l| if l.trim_start().starts_with('#') { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let lexemes = lex(&stripped)?;
    let end = {
        let lines: Vec<&str> = stripped.split('\n').collect();
        (lines.len(), lines.last().map_or(0, |l| l.chars().count()) + 1)
    };
    let mut p = Parser {
        lexemes,
        pos: 0,
        end,
        nodes: Vec::new(),
        edges: Vec::new(),
        defined: HashMap::new(),
        pending: Vec::new(),
        constants: 0,
    };
    match p.peek() {
        None => return Err(p.err(PenmanErrorKind::Empty)),
        Some(Tok::Open) => {
            p.pos += 1;
        }
        Some(Tok::Close) => return Err(p.err(PenmanErrorKind::UnbalancedParens)),
        Some(t) => {
            let t = t.clone();
            p.pos += 1;
            return Err(p.unexpected(&t));
        }
    }
    let root = p.node()?;
    if let Some(t) = p.peek() {
        let kind = if *t == Tok::Close {
            PenmanErrorKind::UnbalancedParens
        } else {
            PenmanErrorKind::Unexpected("content after the graph".into())
        };
        return Err(p.err(kind));
    }

    // Symbol targets are either variable references (possibly forward) or constants.
    // Constants must be numbered in textual order, so resolve pending symbols by
    // rebuilding with the constants inserted where they were written.
    let pending = std::mem::take(&mut p.pending);
    let mut constant_targets = Vec::new();
    for (edge_idx, sym, line, column) in pending {
        if let Some(&target) = p.defined.get(&sym) {
            p.edges[edge_idx].target = target;
            p.edges[edge_idx].reentrant = true;
        } else if looks_like_variable(&sym) {
            return Err(PenmanError { kind: PenmanErrorKind::DanglingReference(sym), line, column });
        } else {
            constant_targets.push((edge_idx, sym));
        }
    }
    if constant_targets.is_empty() {
        return Ok(AmrGraph::from_parts(p.nodes, p.edges, root));
    }
    for (edge_idx, sym) in constant_targets {
        let c = p.nodes.len();
        p.nodes.push(Node { var: String::new(), concept: sym, kind: NodeKind::Constant });
        p.edges[edge_idx].target = c;
    }
    Ok(renumber(p.nodes, p.edges, root))
}

/// Reorders nodes into definition preorder and renames constant variables in
/// that order, so the node list matches the textual order of the graph.
fn renumber(nodes: Vec<Node>, edges: Vec<Edge>, root: usize) -> AmrGraph {
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        children[e.source].push(i);
    }
    let order = preorder(root, &children, &edges);
    debug_assert_eq!(order.len(), nodes.len());
    let mut new_index = vec![0; nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let mut constants = 0;
    let mut new_nodes: Vec<Node> = order.iter().map(|&o| nodes[o].clone()).collect();
    for n in &mut new_nodes {
        if n.kind == NodeKind::Constant {
            n.var = format!("{CONSTANT_VAR_PREFIX}{constants}");
            constants += 1;
        }
    }
    let new_edges = edges
        .into_iter()
        .map(|e| Edge {
            source: new_index[e.source],
            target: new_index[e.target],
            ..e
        })
        .collect();
    AmrGraph::from_parts(new_nodes, new_edges, new_index[root])
}

fn preorder(root: usize, children: &[Vec<usize>], edges: &[Edge]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        out.push(n);
        for &ei in children[n].iter().rev() {
            if !edges[ei].reentrant {
                stack.push(edges[ei].target);
            }
        }
    }
    out
}

/// Canonical multi-line Penman, children in parse order, four-space indent per depth.
/// Reentrant targets are written as bare variables.
pub fn serialize_penman(g: &AmrGraph) -> String {
    let mut out = String::new();
    write_node(g, g.root(), 0, &mut out);
    out
}

fn write_node(g: &AmrGraph, node: usize, depth: usize, out: &mut String) {
    let n = g.node(node);
    let _ = write!(out, "({} / {}", n.var, n.concept);
    for ei in g.children(node) {
        let e = g.edge(ei);
        out.push('\n');
        out.push_str(&"    ".repeat(depth + 1));
        out.push_str(&e.label);
        out.push(' ');
        let t = g.node(e.target);
        if e.reentrant {
            out.push_str(&t.var);
        } else if t.kind == NodeKind::Constant {
            out.push_str(&t.concept);
        } else {
            write_node(g, e.target, depth + 1, out);
        }
    }
    out.push(')');
}

/// One graph of a corpus file with its `# ::key value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AmrEntry {
    pub metadata: Vec<(String, String)>,
    pub graph: AmrGraph,
}

impl AmrEntry {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn id(&self) -> Option<&str> {
        self.meta("id")
    }

    pub fn sentence(&self) -> Option<&str> {
        self.meta("snt")
    }
}

fn parse_metadata(line: &str, into: &mut Vec<(String, String)>) {
    // A comment line may carry several `::key value` pairs.
    let body = line.trim_start_matches('#').trim();
    for part in body.split("::").skip(1) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part.split_once(char::is_whitespace).unwrap_or((part, ""));
        into.push((k.to_string(), v.trim().to_string()));
    }
}

/// Reads a corpus of blank-line-separated Penman blocks. Errors carry line
/// numbers relative to the whole file.
pub fn read_amr_corpus(text: &str) -> Result<Vec<AmrEntry>, PenmanError> {
    let mut entries = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut block_start = 1;
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().chain(std::iter::once(&"")).enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                entries.push(parse_block(&block, block_start)?);
                block.clear();
            }
            block_start = i + 2;
        } else {
            block.push(line);
        }
    }
    Ok(entries)
}

fn parse_block(lines: &[&str], first_line: usize) -> Result<AmrEntry, PenmanError> {
    let mut metadata = Vec::new();
    for l in lines.iter().filter(|l| l.trim_start().starts_with('#')) {
        parse_metadata(l, &mut metadata);
    }
    let graph = parse_penman(&lines.join("\n")).map_err(|mut e| {
        e.line += first_line - 1;
        e
    })?;
    Ok(AmrEntry { metadata, graph })
}

pub fn write_amr_corpus(entries: &[AmrEntry]) -> String {
    let mut out = String::new();
    for (i, entry) in entries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (k, v) in &entry.metadata {
            let _ = writeln!(out, "# ::{k} {v}");
        }
        out.push_str(&serialize_penman(&entry.graph));
        out.push('\n');
    }
    out
}
