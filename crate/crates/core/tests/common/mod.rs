//! Shared fixtures: a small hand-aligned AMR corpus and synthetic attention
//! bundles peaked on the gold words.
#![allow(dead_code)]

use std::collections::BTreeMap;

use amralign::extract::{classify_alignments, AlignmentMap, AlignmentSet, Standard};
use amralign::graph::{linearize, read_amr_corpus, AmrGraph, Linearization, UnitId};
use amralign::matrix::{AttentionBundle, Provenance, ScoreMatrix};
use amralign::pipeline::Sentence;
use amralign::segment::{segment_spans, word_tokenize, MweLexicon, SpanList};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS: &str = include_str!("../fixtures/corpus.amr");

pub struct Fixture {
    pub id: String,
    pub sentence: String,
    pub words: Vec<String>,
    pub spans: SpanList,
    pub graph: AmrGraph,
    pub lin: Linearization,
    /// Gold word of every node.
    pub node_word: BTreeMap<usize, usize>,
}

fn word_index(words: &[String], spec: &str, id: &str) -> usize {
    let (w, k) = match spec.rsplit_once('#') {
        Some((w, k)) => (w, k.parse::<usize>().expect("occurrence")),
        None => (spec, 1),
    };
    words
        .iter()
        .enumerate()
        .filter(|(_, x)| *x == w)
        .nth(k - 1)
        .unwrap_or_else(|| panic!("{id}: word `{spec}` not in sentence"))
        .0
}

pub fn fixtures() -> Vec<Fixture> {
    read_amr_corpus(CORPUS)
        .expect("fixture corpus parses")
        .into_iter()
        .map(|e| {
            let id = e.id().expect("id").to_string();
            let sentence = e.sentence().expect("snt").to_string();
            let words = word_tokenize(&sentence);
            let spans = segment_spans(&words, &MweLexicon::default());
            let g = e.graph.clone();
            let by_path = g.unit_by_path();
            let mut node_word = BTreeMap::new();
            for pair in e.meta("align").unwrap_or("").split_whitespace() {
                let (path, word) = pair.split_once('=').expect("path=word");
                match by_path.get(path) {
                    Some(UnitId::Node(n)) => {
                        node_word.insert(*n, word_index(&words, word, &id));
                    }
                    _ => panic!("{id}: `{path}` is not a node path"),
                }
            }
            assert!(node_word.contains_key(&g.root()), "{id}: root unaligned");
            // Unlisted nodes (mostly constants) take their parent's word.
            let paths = g.unit_paths();
            let mut nodes: Vec<usize> = (0..g.nodes().len()).collect();
            nodes.sort_by_key(|n| paths[&UnitId::Node(*n)].len());
            for n in nodes {
                if !node_word.contains_key(&n) {
                    let parent = g.edge(g.defining_edge(n).expect("non-root")).source;
                    node_word.insert(n, node_word[&parent]);
                }
            }
            let lin = linearize(&g);
            Fixture { id, sentence, words, spans, graph: g, lin, node_word }
        })
        .collect()
}

impl Fixture {
    pub fn sentence_input(&self) -> Sentence {
        Sentence::new(self.id.clone(), self.graph.clone(), &self.sentence, None, &MweLexicon::default())
            .expect("sentence")
    }

    /// Gold word of every edge: the child's word for `-of`, `:mod` and
    /// `:duration`, otherwise the parent's.
    pub fn edge_word(&self, e: usize) -> usize {
        let edge = self.graph.edge(e);
        let l = edge.label.as_str();
        if l.ends_with("-of") || l == ":mod" || l == ":duration" {
            self.node_word[&edge.target]
        } else {
            self.node_word[&edge.source]
        }
    }

    pub fn gold_map(&self) -> AlignmentMap {
        let mut map = AlignmentMap::default();
        for (&n, &w) in &self.node_word {
            map.entries.insert(UnitId::Node(n), self.spans.span_of_word[w]);
        }
        for e in 0..self.graph.edges().len() {
            map.entries.insert(UnitId::Edge(e), self.spans.span_of_word[self.edge_word(e)]);
            if self.graph.edge(e).reentrant {
                let w = self.node_word[&self.graph.edge(e).target];
                map.mentions.insert(e, self.spans.span_of_word[w]);
            }
        }
        map
    }

    pub fn gold(&self, standard: Standard) -> AlignmentSet {
        classify_alignments(&self.id, &self.gold_map(), &self.graph, &self.spans, standard)
    }

    /// Encoder tokens: `<s>`, words with a boundary marker (long words split
    /// in two pieces), `</s>`. Returns the tokens and the first token of each word.
    pub fn encoder_tokens(&self) -> (Vec<String>, Vec<usize>) {
        let mut toks = vec!["<s>".to_string()];
        let mut first = Vec::new();
        for (i, w) in self.words.iter().enumerate() {
            first.push(toks.len());
            let marker = if i == 0 { "" } else { "\u{120}" };
            let chars: Vec<char> = w.chars().collect();
            if chars.len() > 6 {
                let half = chars.len() / 2;
                toks.push(format!("{marker}{}", chars[..half].iter().collect::<String>()));
                toks.push(chars[half..].iter().collect());
            } else {
                toks.push(format!("{marker}{w}"));
            }
        }
        toks.push("</s>".into());
        (toks, first)
    }

    /// Decoder tokens over the linearization (long tokens split in two) and
    /// the linearization token of each.
    pub fn decoder_tokens(&self) -> (Vec<String>, Vec<Option<usize>>) {
        let mut toks = vec!["<s>".to_string()];
        let mut lin_of = vec![None];
        for (i, t) in self.lin.tokens.iter().enumerate() {
            let chars: Vec<char> = t.chars().collect();
            if chars.len() > 8 && !t.starts_with('<') {
                let half = chars.len() / 2;
                toks.push(format!("\u{120}{}", chars[..half].iter().collect::<String>()));
                toks.push(chars[half..].iter().collect());
                lin_of.extend([Some(i), Some(i)]);
            } else {
                toks.push(format!("\u{120}{t}"));
                lin_of.push(Some(i));
            }
        }
        toks.push("</s>".into());
        lin_of.push(None);
        (toks, lin_of)
    }

    /// Word a decoder row should attend to: node rows and re-mentions their
    /// node's word, relation rows the first word, structure nothing.
    fn target_word(&self, lin_token: Option<usize>) -> Option<usize> {
        let t = lin_token?;
        match self.lin.unit_of_token[t]? {
            UnitId::Node(n) => Some(self.node_word[&n]),
            UnitId::Edge(_) => Some(0),
        }
    }

    /// Row-softmaxed attention for `n_layers × n_heads`. Heads with even index
    /// in layers below 4 peak on the gold word; the others fixate on `<s>`.
    pub fn synthetic_bundle(&self, n_layers: usize, n_heads: usize, seed: u64) -> AttentionBundle {
        let (enc, first) = self.encoder_tokens();
        let (dec, lin_of) = self.decoder_tokens();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrices = Vec::new();
        for layer in 0..n_layers {
            for head in 0..n_heads {
                let good = head % 2 == 0 && layer < 4;
                let peak = if good { 4.0 + layer as f64 } else { 3.0 };
                let mut logits = Array2::<f64>::zeros((dec.len(), enc.len()));
                for (j, lt) in lin_of.iter().enumerate() {
                    for c in 0..enc.len() {
                        logits[[j, c]] = rng.gen::<f64>() - 0.5;
                    }
                    let col = if good { self.target_word(*lt).map(|w| first[w]) } else { Some(0) };
                    if let Some(c) = col {
                        logits[[j, c]] += peak;
                    }
                }
                for mut row in logits.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let z = row.sum();
                    row.mapv_inplace(|v| v / z);
                }
                let m = ScoreMatrix::new(logits, Provenance::Head { layer, head }, enc.clone(), dec.clone())
                    .expect("finite")
                    .into_normalized(1e-9)
                    .expect("normalized");
                matrices.push(m);
            }
        }
        AttentionBundle {
            sentence_id: self.id.clone(),
            n_layers,
            n_heads,
            method: "attention".into(),
            encoder_tokens: enc,
            decoder_tokens: dec,
            matrices,
        }
    }
}

pub fn fixture(id: &str) -> Fixture {
    fixtures().into_iter().find(|f| f.id == id).unwrap_or_else(|| panic!("no fixture {id}"))
}

pub fn bundles(fx: &[Fixture], n_layers: usize, n_heads: usize) -> BTreeMap<String, AttentionBundle> {
    fx.iter()
        .enumerate()
        .map(|(i, f)| (f.id.clone(), f.synthetic_bundle(n_layers, n_heads, 1000 + i as u64)))
        .collect()
}

const CONCEPTS: [&str; 10] =
    ["want-01", "boy", "go-02", "girl", "see-01", "tree", "big", "and", "walk-01", "city"];
const LABELS: [&str; 7] = [":ARG0", ":ARG1", ":ARG2", ":mod", ":location", ":ARG0-of", ":op1"];
const CONSTANTS: [(&str, &str); 4] = [(":polarity", "-"), (":quant", "3"), (":value", "\"x y\""), (":year", "1943")];

/// A random Penman graph: a tree over at most `max_nodes` variables plus up to
/// two constants and two reentrant references.
pub fn random_penman(seed: u64, max_nodes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let mut children: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        children[parent].push((i, LABELS[rng.gen_range(0..LABELS.len())]));
    }
    // Pre-order position of each variable, so references point backwards.
    let mut order = Vec::new();
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        order.push(v);
        stack.extend(children[v].iter().rev().map(|c| c.0));
    }
    let mut extras: Vec<Vec<String>> = vec![Vec::new(); n];
    for _ in 0..rng.gen_range(0..=2) {
        let (l, c) = CONSTANTS[rng.gen_range(0..CONSTANTS.len())];
        extras[rng.gen_range(0..n)].push(format!("{l} {c}"));
    }
    if n > 1 {
        for _ in 0..rng.gen_range(0..=2) {
            let pos = rng.gen_range(1..n);
            let target = order[rng.gen_range(0..pos)];
            extras[order[pos]].push(format!(":ARG{} v{target}", rng.gen_range(3..6)));
        }
    }
    let concepts: Vec<&str> = (0..n).map(|_| CONCEPTS[rng.gen_range(0..CONCEPTS.len())]).collect();
    fn write(v: usize, children: &[Vec<(usize, &str)>], extras: &[Vec<String>], concepts: &[&str], out: &mut String) {
        out.push_str(&format!("(v{v} / {}", concepts[v]));
        for (c, l) in &children[v] {
            out.push_str(&format!(" {l} "));
            write(*c, children, extras, concepts, out);
        }
        for e in &extras[v] {
            out.push(' ');
            out.push_str(e);
        }
        out.push(')');
    }
    let mut out = String::new();
    write(0, &children, &extras, &concepts, &mut out);
    out
}

pub fn random_graph(seed: u64, max_nodes: usize) -> AmrGraph {
    let text = random_penman(seed, max_nodes);
    amralign::graph::parse_penman(&text).unwrap_or_else(|e| panic!("{text}: {e}"))
}
