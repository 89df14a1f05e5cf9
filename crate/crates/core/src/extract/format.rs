//! Alignment file formats.
//!
//! ISI: one block per sentence, `# ::id <id>` followed by `word-path` pairs,
//! one or more per line (e.g. `3-0.1.0`). A `i-j|path` pair covers words
//! `i..j`. Relations are addressed as `path.r`. Blocks are separated by blank
//! lines.
//!
//! LEAMR: a JSON object mapping each sentence id to its list of typed records
//! `{"type", "tokens", "nodes", "edges"[, "mention"]}`.

use serde_json::{Map, Value};

use super::{AlignmentKind, AlignmentRecord, AlignmentSet, Standard};
use crate::error::FormatError;

pub fn write_alignments(sets: &[AlignmentSet], standard: Standard) -> String {
    match standard {
        Standard::Isi => write_isi(sets),
        Standard::Leamr => write_leamr(sets),
    }
}

pub fn read_alignments(text: &str, standard: Standard) -> Result<Vec<AlignmentSet>, FormatError> {
    match standard {
        Standard::Isi => read_isi(text),
        Standard::Leamr => read_leamr(text),
    }
}

fn write_isi(sets: &[AlignmentSet]) -> String {
    let mut out = String::new();
    for (i, set) in sets.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# ::id {}\n", set.sentence_id));
        for r in &set.records {
            for unit in r.nodes.iter().chain(&r.edges) {
                for t in &r.tokens {
                    out.push_str(&format!("{t}-{unit}\n"));
                }
            }
        }
    }
    out
}

fn valid_path(p: &str) -> bool {
    let body = p.strip_suffix(".r").unwrap_or(p);
    !body.is_empty() && body.split('.').all(|s| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))
}

fn parse_isi_pair(pair: &str, line: usize) -> Result<(Vec<usize>, String), FormatError> {
    let err = |message: String| FormatError { line, message };
    if let Some((range, path)) = pair.split_once('|') {
        let (a, b) = range.split_once('-').ok_or_else(|| err(format!("bad token range in `{pair}`")))?;
        let a: usize = a.parse().map_err(|_| err(format!("bad token index in `{pair}`")))?;
        let b: usize = b.parse().map_err(|_| err(format!("bad token index in `{pair}`")))?;
        if b <= a {
            return Err(err(format!("empty token range in `{pair}`")));
        }
        if !valid_path(path) {
            return Err(err(format!("bad unit path `{path}`")));
        }
        return Ok(((a..b).collect(), path.to_string()));
    }
    let (tok, path) = pair.split_once('-').ok_or_else(|| err(format!("expected `token-path`, got `{pair}`")))?;
    let tok: usize = tok.parse().map_err(|_| err(format!("bad token index in `{pair}`")))?;
    if !valid_path(path) {
        return Err(err(format!("bad unit path `{path}`")));
    }
    Ok((vec![tok], path.to_string()))
}

fn read_isi(text: &str) -> Result<Vec<AlignmentSet>, FormatError> {
    let mut sets: Vec<AlignmentSet> = Vec::new();
    let mut current: Option<AlignmentSet> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            sets.extend(current.take());
            continue;
        }
        if let Some(id) = l.strip_prefix("# ::id") {
            sets.extend(current.take());
            let id = id.split_whitespace().next().unwrap_or("");
            if id.is_empty() {
                return Err(FormatError { line, message: "empty sentence id".into() });
            }
            current = Some(AlignmentSet::new(id, Standard::Isi));
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let set = current
            .as_mut()
            .ok_or_else(|| FormatError { line, message: "alignment before any `# ::id` line".into() })?;
        for pair in l.split_whitespace() {
            let (tokens, path) = parse_isi_pair(pair, line)?;
            let relation = path.ends_with(".r");
            let pos = set.records.iter().position(|r| r.nodes.first() == Some(&path) || r.edges.first() == Some(&path));
            let rec = match pos {
                Some(p) => &mut set.records[p],
                None => {
                    let (nodes, edges, kind) = if relation {
                        (vec![], vec![path], AlignmentKind::Relation)
                    } else {
                        (vec![path], vec![], AlignmentKind::Subgraph)
                    };
                    set.records.push(AlignmentRecord { kind, tokens: vec![], nodes, edges, mention: None });
                    set.records.last_mut().expect("just pushed")
                }
            };
            for t in tokens {
                if !rec.tokens.contains(&t) {
                    rec.tokens.push(t);
                }
            }
        }
    }
    sets.extend(current);
    Ok(sets)
}

fn write_leamr(sets: &[AlignmentSet]) -> String {
    let mut doc = Map::new();
    for set in sets {
        let records = serde_json::to_value(&set.records).expect("records serialize");
        doc.insert(set.sentence_id.clone(), records);
    }
    let mut out = serde_json::to_string_pretty(&Value::Object(doc)).expect("json");
    out.push('\n');
    out
}

fn read_leamr(text: &str) -> Result<Vec<AlignmentSet>, FormatError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let doc: Map<String, Value> =
        serde_json::from_str(text).map_err(|e| FormatError { line: e.line(), message: e.to_string() })?;
    let mut sets = Vec::with_capacity(doc.len());
    for (id, records) in doc {
        let records: Vec<AlignmentRecord> = serde_json::from_value(records)
            .map_err(|e| FormatError { line: 0, message: format!("sentence {id}: {e}") })?;
        for r in &records {
            if let Some(p) = r.nodes.iter().chain(&r.edges).find(|p| !valid_path(p)) {
                return Err(FormatError { line: 0, message: format!("sentence {id}: bad unit path `{p}`") });
            }
        }
        sets.push(AlignmentSet { sentence_id: id, standard: Standard::Leamr, records });
    }
    Ok(sets)
}
