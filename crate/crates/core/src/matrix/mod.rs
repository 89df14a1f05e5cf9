//! Decoder × encoder score matrices and their reductions.
//!
//! Rows are decoder (graph) tokens, columns encoder (sentence) tokens. Values
//! are post-softmax attention probabilities or saliency weights; the
//! reductions here only ever sum them.

mod aam1;

pub use aam1::{
    load_matrices, load_matrix_dir, parse_bundle, write_bundle_dir, write_bundle_embedded,
    AttentionBundle, Manifest, AAM1_VERSION,
};

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::MatrixError;
use crate::graph::{GraphPosMap, UnitId};
use crate::segment::SentenceTokens;

/// Row-sum tolerance for matrices built in memory.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Where a matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Head { layer: usize, head: usize },
    /// Sum over all selected heads of layers `lo..hi`.
    LayerSum { lo: usize, hi: usize },
    /// Scalar mix of heads within one layer.
    Mix { layer: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub values: Array2<f64>,
    pub provenance: Provenance,
    pub encoder_tokens: Vec<String>,
    pub decoder_tokens: Vec<String>,
    /// Rows sum to one.
    pub normalized: bool,
}

impl ScoreMatrix {
    /// Validates finiteness and that dimensions match the token lists.
    pub fn new(
        values: Array2<f64>,
        provenance: Provenance,
        encoder_tokens: Vec<String>,
        decoder_tokens: Vec<String>,
    ) -> Result<Self, MatrixError> {
        let (rows, cols) = values.dim();
        if rows != decoder_tokens.len() || cols != encoder_tokens.len() {
            return Err(MatrixError::Dimension(format!(
                "{rows}x{cols} matrix for {} decoder and {} encoder tokens",
                decoder_tokens.len(),
                encoder_tokens.len()
            )));
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            let (layer, head) = match provenance {
                Provenance::Head { layer, head } => (layer, head),
                Provenance::LayerSum { lo, .. } => (lo, 0),
                Provenance::Mix { layer } => (layer, 0),
            };
            return Err(MatrixError::NonFinite { layer, head, row, col });
        }
        Ok(ScoreMatrix { values, provenance, encoder_tokens, decoder_tokens, normalized: false })
    }

    /// Marks the matrix as row-normalized after checking every row sums to one.
    pub fn into_normalized(mut self, tolerance: f64) -> Result<Self, MatrixError> {
        for (row, r) in self.values.axis_iter(Axis(0)).enumerate() {
            let sum = r.sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(MatrixError::NotNormalized { row, sum });
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn layer(&self) -> usize {
        match self.provenance {
            Provenance::Head { layer, .. } | Provenance::Mix { layer } => layer,
            Provenance::LayerSum { lo, .. } => lo,
        }
    }

    pub fn head(&self) -> Option<usize> {
        match self.provenance {
            Provenance::Head { head, .. } => Some(head),
            _ => None,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }

    fn same_shape(&self, other: &ScoreMatrix) -> Result<(), MatrixError> {
        if self.dim() != other.dim()
            || self.encoder_tokens != other.encoder_tokens
            || self.decoder_tokens != other.decoder_tokens
        {
            return Err(MatrixError::Dimension(format!(
                "matrices {:?} and {:?} differ in shape or tokens",
                self.provenance, other.provenance
            )));
        }
        Ok(())
    }
}

/// Sums the columns of subword tokens belonging to the same word. Columns of
/// control tokens (no word) are dropped; the result has one column per word.
pub fn merge_subword_columns(m: &ScoreMatrix, st: &SentenceTokens) -> Result<ScoreMatrix, MatrixError> {
    if m.encoder_tokens != st.encoder_tokens {
        return Err(MatrixError::Dimension(format!(
            "matrix has {} encoder tokens, sentence has {}",
            m.encoder_tokens.len(),
            st.encoder_tokens.len()
        )));
    }
    let rows = m.values.nrows();
    let mut out = Array2::<f64>::zeros((rows, st.words.len()));
    for (col, word) in st.word_of_token.iter().enumerate() {
        if let Some(w) = *word {
            let src = m.values.column(col);
            let mut dst = out.column_mut(w);
            dst += &src;
        }
    }
    let all_mapped = st.word_of_token.iter().all(Option::is_some);
    Ok(ScoreMatrix {
        values: out,
        provenance: m.provenance,
        encoder_tokens: st.words.clone(),
        decoder_tokens: m.decoder_tokens.clone(),
        normalized: m.normalized && all_mapped,
    })
}

/// Rows merged per semantic unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScores {
    /// Unit of each row, in order of first decoder token.
    pub units: Vec<UnitId>,
    pub matrix: ScoreMatrix,
}

impl UnitScores {
    pub fn row_of(&self, unit: UnitId) -> Option<usize> {
        self.units.iter().position(|u| *u == unit)
    }
}

/// Sums the rows of decoder tokens belonging to the same semantic unit; rows
/// of structural tokens are dropped.
pub fn merge_unit_rows(m: &ScoreMatrix, gp: &GraphPosMap) -> Result<UnitScores, MatrixError> {
    if m.values.nrows() != gp.len() {
        return Err(MatrixError::Dimension(format!(
            "matrix has {} decoder rows, position map has {}",
            m.values.nrows(),
            gp.len()
        )));
    }
    let units = gp.units_in_order();
    let mut out = Array2::<f64>::zeros((units.len(), m.values.ncols()));
    for (row, unit) in gp.units.iter().enumerate() {
        if let Some(u) = unit {
            let r = units.iter().position(|x| x == u).expect("unit listed");
            let mut dst = out.row_mut(r);
            dst += &m.values.row(row);
        }
    }
    let labels = units.iter().map(ToString::to_string).collect();
    Ok(UnitScores {
        matrix: ScoreMatrix {
            values: out,
            provenance: m.provenance,
            encoder_tokens: m.encoder_tokens.clone(),
            decoder_tokens: labels,
            normalized: false,
        },
        units,
    })
}

/// Element-wise sum over all per-head matrices with layer in `layers` (and,
/// when given, head in `heads`). Summation runs in (layer, head) order, so
/// the result does not depend on the order of `ms`.
pub fn sum_layers(
    ms: &[ScoreMatrix],
    layers: Range<usize>,
    heads: Option<&[usize]>,
) -> Result<ScoreMatrix, MatrixError> {
    let mut selected: Vec<(usize, usize, &ScoreMatrix)> = ms
        .iter()
        .filter_map(|m| match m.provenance {
            Provenance::Head { layer, head } => Some((layer, head, m)),
            _ => None,
        })
        .filter(|(l, h, _)| layers.contains(l) && heads.is_none_or(|hs| hs.contains(h)))
        .collect();
    if selected.is_empty() {
        return Err(MatrixError::EmptySelection(format!(
            "no matrices in layers {}:{}",
            layers.start, layers.end
        )));
    }
    selected.sort_by_key(|(l, h, _)| (*l, *h));
    let first = selected[0].2;
    let mut acc = Array2::<f64>::zeros(first.dim());
    for (_, _, m) in &selected {
        first.same_shape(m)?;
        acc += &m.values;
    }
    Ok(ScoreMatrix {
        values: acc,
        provenance: Provenance::LayerSum { lo: layers.start, hi: layers.end },
        encoder_tokens: first.encoder_tokens.clone(),
        decoder_tokens: first.decoder_tokens.clone(),
        normalized: selected.len() == 1 && first.normalized,
    })
}

/// Learnable scalar mix over attention heads: `γ · Σ_h softmax(a)_h · att_h`,
/// the softmax restricted to `head_subset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub raw: Vec<f64>,
    pub gamma: f64,
    pub head_subset: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
}

impl MixWeights {
    /// Uniform weights over `head_subset` out of `n_heads`, γ = 1.
    pub fn uniform(n_heads: usize, head_subset: &[usize]) -> Result<Self, MatrixError> {
        let w = MixWeights {
            raw: vec![0.0; n_heads],
            gamma: 1.0,
            head_subset: head_subset.to_vec(),
            layer: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn all_heads(n_heads: usize) -> Self {
        MixWeights { raw: vec![0.0; n_heads], gamma: 1.0, head_subset: (0..n_heads).collect(), layer: None }
    }

    pub fn n_heads(&self) -> usize {
        self.raw.len()
    }

    pub fn validate(&self) -> Result<(), MatrixError> {
        if self.head_subset.is_empty() {
            return Err(MatrixError::HeadMismatch("empty head subset".into()));
        }
        let unique: BTreeSet<_> = self.head_subset.iter().collect();
        if unique.len() != self.head_subset.len() {
            return Err(MatrixError::HeadMismatch("repeated head in subset".into()));
        }
        if let Some(h) = self.head_subset.iter().find(|&&h| h >= self.raw.len()) {
            return Err(MatrixError::HeadMismatch(format!(
                "head {h} outside 0..{}",
                self.raw.len()
            )));
        }
        if !self.gamma.is_finite() || self.raw.iter().any(|a| !a.is_finite()) {
            return Err(MatrixError::HeadMismatch("non-finite mix parameter".into()));
        }
        Ok(())
    }

    /// Softmax of the raw weights over the subset; zero outside it.
    pub fn softmax(&self) -> Vec<f64> {
        let max = self
            .head_subset
            .iter()
            .map(|&h| self.raw[h])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = vec![0.0; self.raw.len()];
        let mut z = 0.0;
        for &h in &self.head_subset {
            s[h] = (self.raw[h] - max).exp();
            z += s[h];
        }
        for &h in &self.head_subset {
            s[h] /= z;
        }
        s
    }
}

/// Mixes per-head matrices of one layer into a single matrix.
pub fn scalar_mix(heads: &[ScoreMatrix], w: &MixWeights) -> Result<ScoreMatrix, MatrixError> {
    w.validate()?;
    let s = w.softmax();
    let layer = heads.first().map(ScoreMatrix::layer);
    let mut acc: Option<(Array2<f64>, &ScoreMatrix)> = None;
    for &h in &w.head_subset {
        let m = heads
            .iter()
            .find(|m| m.head() == Some(h))
            .ok_or_else(|| MatrixError::HeadMismatch(format!("head {h} not provided")))?;
        if Some(m.layer()) != layer {
            return Err(MatrixError::HeadMismatch("heads come from different layers".into()));
        }
        match &mut acc {
            None => acc = Some((m.values.mapv(|v| v * s[h]), m)),
            Some((a, first)) => {
                first.same_shape(m)?;
                a.scaled_add(s[h], &m.values);
            }
        }
    }
    let (mut values, first) = acc.expect("non-empty subset");
    values *= w.gamma;
    Ok(ScoreMatrix {
        values,
        provenance: Provenance::Mix { layer: first.layer() },
        encoder_tokens: first.encoder_tokens.clone(),
        decoder_tokens: first.decoder_tokens.clone(),
        normalized: first.normalized && (w.gamma - 1.0).abs() < 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>) {
        assert_eq!(a.dim(), b.dim());
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12), "{a} != {b}");
    }

    fn toks(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    fn head(layer: usize, head: usize, v: Array2<f64>) -> ScoreMatrix {
        let (r, c) = v.dim();
        ScoreMatrix::new(v, Provenance::Head { layer, head }, toks(c, "e"), toks(r, "d")).unwrap()
    }

    #[test]
    fn normalization_check() {
        let m = head(0, 0, array![[0.5, 0.3, 0.2], [0.1, 0.8, 0.1]]);
        assert!(m.into_normalized(ROW_SUM_TOLERANCE).unwrap().normalized);
        let bad = head(0, 0, array![[0.5, 0.5, 0.5], [0.1, 0.8, 0.1]]);
        assert!(matches!(
            bad.into_normalized(ROW_SUM_TOLERANCE),
            Err(MatrixError::NotNormalized { row: 0, .. })
        ));
    }

    #[test]
    fn rejects_non_finite_and_bad_dims() {
        let r = ScoreMatrix::new(array![[f64::NAN]], Provenance::Head { layer: 1, head: 2 }, toks(1, "e"), toks(1, "d"));
        assert!(matches!(r, Err(MatrixError::NonFinite { layer: 1, head: 2, row: 0, col: 0 })));
        let r = ScoreMatrix::new(array![[1.0, 0.0]], Provenance::Head { layer: 0, head: 0 }, toks(1, "e"), toks(1, "d"));
        assert!(matches!(r, Err(MatrixError::Dimension(_))));
    }

    #[test]
    fn subword_columns_sum() {
        let m = ScoreMatrix::new(
            array![[0.1, 0.2, 0.3, 0.4]],
            Provenance::Head { layer: 0, head: 0 },
            vec!["<s>".into(), "\u{120}mer".into(), "chant".into(), "</s>".into()],
            toks(1, "d"),
        )
        .unwrap();
        let st = SentenceTokens::from_markers(&m.encoder_tokens).unwrap();
        let merged = merge_subword_columns(&m, &st).unwrap();
        assert_eq!(merged.dim(), (1, 1));
        assert_abs_diff_eq!(merged.values[[0, 0]], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn identity_merges() {
        let m = head(0, 0, array![[0.2, 0.8], [0.6, 0.4]]);
        let st = SentenceTokens::identity(&m.encoder_tokens);
        assert_eq!(merge_subword_columns(&m, &st).unwrap().values, m.values);
    }

    #[test]
    fn unit_rows_sum() {
        let m = head(0, 0, array![[0.1, 0.9], [0.2, 0.8], [0.3, 0.7], [0.5, 0.5]]);
        let gp = GraphPosMap {
            units: vec![Some(UnitId::Node(0)), Some(UnitId::Node(0)), Some(UnitId::Node(0)), None],
            lin_tokens: vec![Some(0), Some(0), Some(0), Some(1)],
        };
        let us = merge_unit_rows(&m, &gp).unwrap();
        assert_eq!(us.units, [UnitId::Node(0)]);
        assert_abs_diff_eq!(us.matrix.values[[0, 0]], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(us.matrix.values[[0, 1]], 2.4, epsilon = 1e-12);
    }

    #[test]
    fn layer_sums() {
        let ones = Array2::<f64>::ones((2, 2));
        let ms = vec![head(0, 0, ones.clone()), head(0, 1, ones.clone()), head(5, 0, ones.clone())];
        let s = sum_layers(&ms, 0..1, None).unwrap();
        assert_eq!(s.values, Array2::from_elem((2, 2), 2.0));
        let one = sum_layers(&ms, 0..1, Some(&[1])).unwrap();
        assert_eq!(one.values, ones);
        assert!(matches!(sum_layers(&ms, 1..4, None), Err(MatrixError::EmptySelection(_))));
    }

    #[test]
    fn mix_examples() {
        let a = head(3, 0, array![[1.0, 0.0], [0.0, 1.0]]);
        let b = head(3, 1, array![[0.0, 1.0], [1.0, 0.0]]);
        let w = MixWeights { raw: vec![3f64.ln(), 0.0], gamma: 1.0, head_subset: vec![0, 1], layer: None };
        let mixed = scalar_mix(&[a.clone(), b.clone()], &w).unwrap();
        assert_close(&mixed.values, &array![[0.75, 0.25], [0.25, 0.75]]);

        let uniform = MixWeights::all_heads(2);
        let same = scalar_mix(&[a.clone(), head(3, 1, a.values.clone())], &uniform).unwrap();
        assert_close(&same.values, &a.values);

        let bad = MixWeights::uniform(2, &[0, 2]);
        assert!(matches!(bad, Err(MatrixError::HeadMismatch(_))));
        let missing = MixWeights::all_heads(3);
        assert!(scalar_mix(&[a, b], &missing).is_err());
    }

    #[test]
    fn half_of_sixteen_heads_subset() {
        let subset = [3, 4, 5, 6, 7, 11, 12, 15];
        let w = MixWeights::uniform(16, &subset).unwrap();
        let s = w.softmax();
        assert_abs_diff_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(s[0], 0.0);
        assert_abs_diff_eq!(s[6], 0.125, epsilon = 1e-12);
    }
}
