//! Corpus-level glue: pairs AMR entries, sentences, spans and attention
//! bundles, and runs extraction, correlation and loss checks over them.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::extract::{extract_alignments, AlignmentSet, ExtractConfig};
use crate::graph::{linearize, map_output_tokens, AmrEntry, AmrGraph, GraphPosMap, Linearization};
use crate::loss::{AttentionKind, LossInput};
use crate::matrix::{merge_subword_columns, scalar_mix, sum_layers, AttentionBundle, MixWeights, ScoreMatrix};
use crate::metrics::{build_align_matrix, correlation_heatmap, AlignMatrix, Heatmap};
use crate::segment::{segment_spans, word_tokenize, MweLexicon, SentenceTokens, SpanList};

/// How per-head matrices are reduced to one matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Reduction {
    /// Sum over layers `layers`, optionally restricted to some heads.
    LayerSum { layers: Range<usize>, heads: Option<Vec<usize>> },
    /// Scalar mix over the heads of one layer.
    Mix { layer: usize, weights: MixWeights },
}

impl Default for Reduction {
    /// The first four layers, all heads.
    fn default() -> Self {
        Reduction::LayerSum { layers: 0..4, heads: None }
    }
}

/// Parses `lo:hi` (half-open) or a single layer `l`.
pub fn parse_layer_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad layer `{x}` in `{s}`"));
    let r = match s.split_once(':') {
        Some((a, b)) => parse(a)?..parse(b)?,
        None => {
            let l = parse(s)?;
            l..l + 1
        }
    };
    if r.is_empty() {
        return Err(format!("empty layer range `{s}`"));
    }
    Ok(r)
}

/// One sentence with everything extraction needs.
#[derive(Debug, Clone)]
pub struct Sentence {
    pub id: String,
    pub graph: AmrGraph,
    pub words: Vec<String>,
    pub spans: SpanList,
    pub lin: Linearization,
}

impl Sentence {
    pub fn new(id: String, graph: AmrGraph, text: &str, span_line: Option<&str>, lexicon: &MweLexicon) -> Result<Self> {
        let words = word_tokenize(text);
        let spans = match span_line {
            Some(line) => SpanList::parse_line(line, Some(&words))?,
            None => segment_spans(&words, lexicon),
        };
        let lin = linearize(&graph);
        Ok(Sentence { id, graph, words, spans, lin })
    }

    /// Token maps between a bundle's streams and this sentence.
    pub fn token_maps(&self, bundle: &AttentionBundle) -> Result<(SentenceTokens, GraphPosMap)> {
        let st = SentenceTokens::align_to_words(&bundle.encoder_tokens, &self.words)
            .map_err(|e| Error::Input(format!("{}: encoder tokens vs sentence: {e}", self.id)))?;
        let gp = map_output_tokens(&self.lin, &bundle.decoder_tokens)
            .map_err(|e| Error::Input(format!("{}: decoder tokens vs linearized graph: {e}", self.id)))?;
        Ok((st, gp))
    }
}

/// Pairs AMR entries with sentences and optional span lines.
///
/// Sentences come from `sentences` (same order as the entries) or from each
/// entry's `snt` metadata. Entries without an id get `s{index}`.
pub fn build_sentences(
    entries: Vec<AmrEntry>,
    sentences: Option<&[String]>,
    span_lines: Option<&[String]>,
    lexicon: &MweLexicon,
) -> Result<Vec<Sentence>> {
    if let Some(s) = sentences {
        if s.len() != entries.len() {
            return Err(Error::Input(format!("{} sentences for {} graphs", s.len(), entries.len())));
        }
    }
    if let Some(s) = span_lines {
        if s.len() != entries.len() {
            return Err(Error::Input(format!("{} span lines for {} graphs", s.len(), entries.len())));
        }
    }
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let id = e.id().map_or_else(|| format!("s{i}"), str::to_string);
            let text = match sentences {
                Some(s) => s[i].clone(),
                None => e
                    .sentence()
                    .ok_or_else(|| Error::Input(format!("{id}: no sentence given and no `# ::snt` line")))?
                    .to_string(),
            };
            Sentence::new(id, e.graph, &text, span_lines.map(|s| s[i].as_str()), lexicon)
        })
        .collect()
}

fn bundle_for<'a>(bundles: &'a BTreeMap<String, AttentionBundle>, id: &str) -> Result<&'a AttentionBundle> {
    bundles.get(id).ok_or_else(|| Error::Input(format!("no attention bundle for sentence `{id}`")))
}

/// Reduces a bundle's matrices.
pub fn reduce(bundle: &AttentionBundle, reduction: &Reduction) -> Result<ScoreMatrix> {
    Ok(match reduction {
        Reduction::LayerSum { layers, heads } => sum_layers(&bundle.matrices, layers.clone(), heads.as_deref())?,
        Reduction::Mix { layer, weights } => scalar_mix(&bundle.layer(*layer), weights)?,
    })
}

/// Extracts alignments for one sentence.
pub fn align_sentence(
    s: &Sentence,
    bundle: &AttentionBundle,
    reduction: &Reduction,
    cfg: &ExtractConfig,
) -> Result<AlignmentSet> {
    let (st, gp) = s.token_maps(bundle)?;
    let m = reduce(bundle, reduction)?;
    let merged = merge_subword_columns(&m, &st)?;
    Ok(extract_alignments(&s.id, &st, &s.spans, &s.lin, &gp, &merged, &s.graph, cfg)?)
}

/// Extracts alignments for every sentence, in corpus order.
pub fn align_corpus(
    sentences: &[Sentence],
    bundles: &BTreeMap<String, AttentionBundle>,
    reduction: &Reduction,
    cfg: &ExtractConfig,
) -> Result<Vec<AlignmentSet>> {
    sentences.iter().map(|s| align_sentence(s, bundle_for(bundles, &s.id)?, reduction, cfg)).collect()
}

/// Gold alignment matrices at bundle token level, one per sentence with gold.
fn gold_matrices<'a>(
    sentences: &'a [Sentence],
    bundles: &'a BTreeMap<String, AttentionBundle>,
    gold: &[AlignmentSet],
) -> Result<Vec<(&'a Sentence, &'a AttentionBundle, AlignMatrix)>> {
    let by_id: BTreeMap<&str, &AlignmentSet> = gold.iter().map(|g| (g.sentence_id.as_str(), g)).collect();
    let mut out = Vec::new();
    for s in sentences {
        let Some(g) = by_id.get(s.id.as_str()) else {
            log::warn!("{}: no gold alignments, skipped", s.id);
            continue;
        };
        let bundle = bundle_for(bundles, &s.id)?;
        let (st, gp) = s.token_maps(bundle)?;
        let am = build_align_matrix(g, &s.graph, &st, &s.lin, &gp)?;
        out.push((s, bundle, am));
    }
    if out.is_empty() {
        return Err(Error::Input("no sentence has both matrices and gold alignments".into()));
    }
    Ok(out)
}

/// Layer × head correlation heatmap of the attention against gold alignments.
pub fn correlate_corpus(
    sentences: &[Sentence],
    bundles: &BTreeMap<String, AttentionBundle>,
    gold: &[AlignmentSet],
) -> Result<Heatmap> {
    let mats = gold_matrices(sentences, bundles, gold)?;
    let samples: Vec<(&[ScoreMatrix], &AlignMatrix)> =
        mats.iter().map(|(_, b, am)| (b.matrices.as_slice(), am)).collect();
    Ok(correlation_heatmap(&samples)?)
}

/// Loss inputs for one layer: all heads of the layer, mixed by `weights`.
/// Normalized bundles are treated as post-softmax attention.
pub fn loss_dataset(
    sentences: &[Sentence],
    bundles: &BTreeMap<String, AttentionBundle>,
    gold: &[AlignmentSet],
    layer: usize,
    weights: &MixWeights,
) -> Result<Vec<LossInput>> {
    let mut out = Vec::new();
    for (s, bundle, am) in gold_matrices(sentences, bundles, gold)? {
        let mut heads = bundle.layer(layer);
        if heads.len() != weights.n_heads() {
            return Err(Error::Input(format!(
                "{}: layer {layer} has {} heads, mix has {}",
                s.id,
                heads.len(),
                weights.n_heads()
            )));
        }
        heads.sort_by_key(|m| m.head());
        let kind = if heads.iter().all(|m| m.normalized) { AttentionKind::PostSoftmax } else { AttentionKind::PreSoftmax };
        let inp = LossInput::new(heads.into_iter().map(|m| m.values).collect(), weights.clone(), am.values, kind)?;
        if inp.supervised_rows().is_empty() {
            log::warn!("{}: no supervised decoder rows, skipped", s.id);
            continue;
        }
        out.push(inp);
    }
    Ok(out)
}
