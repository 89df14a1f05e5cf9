//! Binary alignment matrices and their correlation with attention.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::MetricError;
use crate::extract::{AlignmentKind, AlignmentSet};
use crate::graph::{AmrGraph, GraphPosMap, Linearization, UnitId};
use crate::matrix::ScoreMatrix;
use crate::segment::SentenceTokens;

/// Decoder × encoder 0/1 matrix; `mask` marks excluded positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignMatrix {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

impl AlignMatrix {
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Unmasked entries in row-major order.
    pub fn unmasked(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.indexed_iter().filter(|(ix, _)| !self.mask[*ix]).map(|(ix, v)| (ix, *v))
    }
}

fn is_punctuation(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| !c.is_alphanumeric())
}

/// Expands an alignment set to decoder/encoder token level.
///
/// Rows of structural decoder tokens and columns of control tokens or pure
/// punctuation words are masked. Re-mention pointer rows take the span of
/// their reentrancy record when there is one.
pub fn build_align_matrix(
    a: &AlignmentSet,
    g: &AmrGraph,
    st: &SentenceTokens,
    lin: &Linearization,
    gp: &GraphPosMap,
) -> Result<AlignMatrix, MetricError> {
    let (nd, ne) = (gp.len(), st.encoder_tokens.len());
    let by_path = g.unit_by_path();
    let lookup = |p: &String| {
        by_path.get(p).copied().ok_or_else(|| MetricError::Dimension(format!("unit path `{p}` not in graph")))
    };
    let cols_of = |words: &[usize]| -> Vec<usize> {
        (0..ne).filter(|&c| st.word_of_token[c].is_some_and(|w| words.contains(&w))).collect()
    };
    let mention_of_row = |j: usize| gp.lin_tokens[j].and_then(|t| lin.mention_of_token.get(t).copied().flatten());

    let mut values = Array2::zeros((nd, ne));
    let mut row_cols: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in a.records.iter().filter(|r| r.kind != AlignmentKind::Reentrancy) {
        let units: Vec<UnitId> = r.nodes.iter().chain(&r.edges).map(lookup).collect::<Result<_, _>>()?;
        let cols = cols_of(&r.tokens);
        for j in (0..nd).filter(|&j| gp.units[j].is_some_and(|u| units.contains(&u))) {
            row_cols.entry(j).or_default().extend(&cols);
        }
    }
    for r in a.records.iter().filter(|r| r.kind == AlignmentKind::Reentrancy) {
        let edges: Vec<usize> = r
            .edges
            .iter()
            .map(lookup)
            .filter_map(|u| match u {
                Ok(UnitId::Edge(e)) => Some(Ok(e)),
                Ok(UnitId::Node(_)) => None,
                Err(e) => Some(Err(e)),
            })
            .collect::<Result<_, _>>()?;
        let cols = cols_of(&r.tokens);
        for j in (0..nd).filter(|&j| mention_of_row(j).is_some_and(|e| edges.contains(&e))) {
            row_cols.insert(j, cols.clone());
        }
    }
    for (j, cols) in row_cols {
        for c in cols {
            values[[j, c]] = 1.0;
        }
    }

    let masked_col: Vec<bool> =
        (0..ne).map(|c| st.word_of_token[c].is_none_or(|w| is_punctuation(&st.words[w]))).collect();
    let mask = Array2::from_shape_fn((nd, ne), |(j, c)| gp.units[j].is_none() || masked_col[c]);
    values.zip_mut_with(&mask, |v, &m| {
        if m {
            *v = 0.0;
        }
    });
    Ok(AlignMatrix { values, mask })
}

/// Pearson's r by the direct sum formula.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if x.is_empty() || sxx == 0.0 {
        return Err(MetricError::ConstantVector("score"));
    }
    if syy == 0.0 {
        return Err(MetricError::ConstantVector("alignment"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

fn unmasked_pairs(m: &ScoreMatrix, am: &AlignMatrix, xs: &mut Vec<f64>, ys: &mut Vec<f64>) -> Result<(), MetricError> {
    if m.dim() != am.dim() {
        return Err(MetricError::Dimension(format!("score matrix {:?} vs alignment matrix {:?}", m.dim(), am.dim())));
    }
    for (ix, v) in am.unmasked() {
        xs.push(m.values[ix]);
        ys.push(v);
    }
    Ok(())
}

/// Pearson's r between a score matrix and an alignment matrix over the
/// unmasked positions.
pub fn pearson_correlation(m: &ScoreMatrix, am: &AlignMatrix) -> Result<f64, MetricError> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    unmasked_pairs(m, am, &mut xs, &mut ys)?;
    pearson(&xs, &ys)
}

/// Layer × head grid of correlations pooled over sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `r[layer][head]`; `None` where undefined (no data or constant input).
    pub r: Vec<Vec<Option<f64>>>,
}

/// Correlation of every (layer, head) with the alignments, positions of all
/// sentences pooled. Each sample holds one sentence's per-head matrices.
pub fn correlation_heatmap(samples: &[(&[ScoreMatrix], &AlignMatrix)]) -> Result<Heatmap, MetricError> {
    let mut pooled: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (heads, am) in samples {
        for m in heads.iter() {
            let head = m
                .head()
                .ok_or_else(|| MetricError::Dimension("heatmap needs per-head matrices".into()))?;
            let (xs, ys) = pooled.entry((m.layer(), head)).or_default();
            unmasked_pairs(m, am, xs, ys)?;
        }
    }
    let n_layers = pooled.keys().map(|k| k.0 + 1).max().unwrap_or(0);
    let n_heads = pooled.keys().map(|k| k.1 + 1).max().unwrap_or(0);
    let mut r = vec![vec![None; n_heads]; n_layers];
    for ((l, h), (xs, ys)) in pooled {
        r[l][h] = pearson(&xs, &ys).ok();
    }
    Ok(Heatmap { r })
}

impl Heatmap {
    pub fn n_layers(&self) -> usize {
        self.r.len()
    }

    pub fn n_heads(&self) -> usize {
        self.r.first().map_or(0, Vec::len)
    }

    /// Cell with the highest correlation.
    pub fn best(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (l, row) in self.r.iter().enumerate() {
            for (h, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|b| v > b.2) {
                        best = Some((l, h, v));
                    }
                }
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,head,r\n");
        for (l, row) in self.r.iter().enumerate() {
            for (h, v) in row.iter().enumerate() {
                let _ = match v {
                    Some(v) => writeln!(s, "{l},{h},{v:.6}"),
                    None => writeln!(s, "{l},{h},"),
                };
            }
        }
        s
    }

    /// Heads on the x axis, layers on the y axis; red for positive r,
    /// blue for negative, grey where undefined.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 36;
        const MARGIN: usize = 48;
        let (w, h) = (MARGIN + CELL * self.n_heads() + 8, MARGIN + CELL * self.n_layers() + 8);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="14" text-anchor="middle">head</text>"#, MARGIN + CELL * self.n_heads() / 2);
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">layer</text>"#,
            MARGIN + CELL * self.n_layers() / 2,
            MARGIN + CELL * self.n_layers() / 2
        );
        for hd in 0..self.n_heads() {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{hd}</text>"#, MARGIN + hd * CELL + CELL / 2, MARGIN - 6);
        }
        for (l, row) in self.r.iter().enumerate() {
            let y = MARGIN + l * CELL;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{l}</text>"#, MARGIN - 6, y + CELL / 2 + 4);
            for (hd, v) in row.iter().enumerate() {
                let x = MARGIN + hd * CELL;
                let fill = match v {
                    None => "#cccccc".to_string(),
                    Some(v) => {
                        let t = v.clamp(-1.0, 1.0);
                        let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                        if t >= 0.0 {
                            format!("#ff{fade:02x}{fade:02x}")
                        } else {
                            format!("#{fade:02x}{fade:02x}ff")
                        }
                    }
                };
                let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="white"/>"#);
                if let Some(v) = v {
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{v:.2}</text>"#,
                        x + CELL / 2,
                        y + CELL / 2 + 3
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
