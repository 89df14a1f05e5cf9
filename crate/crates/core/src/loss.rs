//! Guided cross-attention loss: cross-entropy between the alignment
//! distribution of each supervised decoder position and the softmax of the
//! mixed attention over encoder positions, with analytic gradients.
//!
//! Layout follows [`ScoreMatrix`](crate::matrix::ScoreMatrix): rows are
//! decoder positions, columns encoder positions, so the softmax runs along
//! each row.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{LossError, MatrixError};
use crate::matrix::MixWeights;

/// Log floor for post-softmax inputs.
pub const POST_SOFTMAX_FLOOR: f64 = 1e-12;
/// Denominator floor of the relative error in [`grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
/// Attention entries compared in [`grad_check`] per input.
pub const GRAD_CHECK_SAMPLES: usize = 64;

/// Whether head matrices are logits or probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    #[default]
    PreSoftmax,
    PostSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossInput {
    /// One decoder × encoder matrix per head; index = head id.
    pub heads: Vec<Array2<f64>>,
    pub mix: MixWeights,
    /// Decoder × encoder alignment weights; rows with zero sum are unsupervised.
    pub align: Array2<f64>,
    pub kind: AttentionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub d_raw: Vec<f64>,
    pub d_gamma: f64,
    /// Gradient for every head matrix (zero outside the head subset).
    pub d_heads: Vec<Array2<f64>>,
}

impl LossInput {
    pub fn new(heads: Vec<Array2<f64>>, mix: MixWeights, align: Array2<f64>, kind: AttentionKind) -> Result<Self, LossError> {
        let inp = LossInput { heads, mix, align, kind };
        inp.validate()?;
        Ok(inp)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        self.mix.validate().map_err(|e: MatrixError| LossError::Dimension(e.to_string()))?;
        if self.heads.len() != self.mix.n_heads() {
            return Err(LossError::Dimension(format!(
                "{} head matrices for {} mix weights",
                self.heads.len(),
                self.mix.n_heads()
            )));
        }
        if let Some(h) = self.heads.iter().position(|m| m.dim() != self.align.dim()) {
            return Err(LossError::Dimension(format!(
                "head {h} is {:?}, alignment is {:?}",
                self.heads[h].dim(),
                self.align.dim()
            )));
        }
        if self.align.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LossError::Dimension("alignment weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `Σ_h s_h · A_h`, before the γ scale.
    fn weighted(&self, s: &[f64]) -> Array2<f64> {
        let mut m = Array2::zeros(self.align.dim());
        for &h in &self.mix.head_subset {
            m.scaled_add(s[h], &self.heads[h]);
        }
        m
    }

    pub fn supervised_rows(&self) -> Vec<usize> {
        (0..self.align.nrows()).filter(|&j| self.align.row(j).sum() > 0.0).collect()
    }
}

/// Loss value and gradients with respect to the raw mix weights, γ and every
/// attention entry.
pub fn guided_loss(inp: &LossInput) -> Result<LossOutput, LossError> {
    inp.validate()?;
    let rows = inp.supervised_rows();
    if rows.is_empty() {
        return Err(LossError::NoSupervisedRows);
    }
    let s = inp.mix.softmax();
    let weighted = inp.weighted(&s);
    let att = &weighted * inp.mix.gamma;

    // g = dL/d att
    let mut g = Array2::<f64>::zeros(att.dim());
    let mut value = 0.0;
    for &j in &rows {
        let a = inp.align.row(j);
        let z = a.sum();
        let row = att.row(j);
        match inp.kind {
            AttentionKind::PreSoftmax => {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum_exp.ln();
                for (i, &v) in row.iter().enumerate() {
                    let p = a[i] / z;
                    let q = (v - lse).exp();
                    value -= p * (v - lse);
                    g[[j, i]] = q - p;
                }
            }
            AttentionKind::PostSoftmax => {
                for (i, &v) in row.iter().enumerate() {
                    let p = a[i] / z;
                    if p == 0.0 {
                        continue;
                    }
                    if v > POST_SOFTMAX_FLOOR {
                        value -= p * v.ln();
                        g[[j, i]] = -p / v;
                    } else {
                        value -= p * POST_SOFTMAX_FLOOR.ln();
                    }
                }
            }
        }
    }

    let d_gamma = (&g * &weighted).sum();
    let mut d_heads = vec![Array2::zeros(att.dim()); inp.heads.len()];
    let mut gh = vec![0.0; inp.heads.len()];
    for &h in &inp.mix.head_subset {
        d_heads[h] = &g * (inp.mix.gamma * s[h]);
        gh[h] = inp.mix.gamma * Zip::from(&g).and(&inp.heads[h]).fold(0.0, |acc, a, b| acc + a * b);
    }
    let mean: f64 = inp.mix.head_subset.iter().map(|&h| s[h] * gh[h]).sum();
    let mut d_raw = vec![0.0; inp.heads.len()];
    for &h in &inp.mix.head_subset {
        d_raw[h] = s[h] * (gh[h] - mean);
    }
    Ok(LossOutput { value, d_raw, d_gamma, d_heads })
}

fn loss_value(inp: &LossInput) -> Result<f64, LossError> {
    guided_loss(inp).map(|o| o.value)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR)
}

/// Largest relative error between analytic gradients and central finite
/// differences over every raw weight, γ, and up to [`GRAD_CHECK_SAMPLES`]
/// attention entries taken at an even stride over the supervised rows.
pub fn grad_check(inp: &LossInput, eps: f64) -> Result<f64, LossError> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(LossError::StepOutOfRange(eps));
    }
    let out = guided_loss(inp)?;
    let mut worst = 0.0f64;
    let central = |perturb: &dyn Fn(&mut LossInput, f64)| -> Result<f64, LossError> {
        let mut plus = inp.clone();
        perturb(&mut plus, eps);
        let mut minus = inp.clone();
        perturb(&mut minus, -eps);
        Ok((loss_value(&plus)? - loss_value(&minus)?) / (2.0 * eps))
    };
    for k in 0..inp.mix.raw.len() {
        let n = central(&|x: &mut LossInput, d| x.mix.raw[k] += d)?;
        worst = worst.max(rel_err(out.d_raw[k], n));
    }
    let n = central(&|x: &mut LossInput, d| x.mix.gamma += d)?;
    worst = worst.max(rel_err(out.d_gamma, n));

    let cols = inp.align.ncols();
    let entries: Vec<(usize, usize, usize)> = inp
        .mix
        .head_subset
        .iter()
        .flat_map(|&h| inp.supervised_rows().into_iter().flat_map(move |j| (0..cols).map(move |i| (h, j, i))))
        .collect();
    let stride = entries.len().div_ceil(GRAD_CHECK_SAMPLES).max(1);
    for &(h, j, i) in entries.iter().step_by(stride) {
        let n = central(&|x: &mut LossInput, d| x.heads[h][[j, i]] += d)?;
        worst = worst.max(rel_err(out.d_heads[h][[j, i]], n));
    }
    Ok(worst)
}

/// Plain gradient descent on the raw mix weights and γ, minimizing the mean
/// loss over `dataset`. Each input's own mix is ignored in favour of `init`.
pub fn fit_mix(dataset: &[LossInput], init: &MixWeights, steps: usize, lr: f64) -> Result<MixWeights, LossError> {
    if dataset.is_empty() {
        return Err(LossError::EmptyDataset);
    }
    let mut w = init.clone();
    let mut scratch: Vec<LossInput> = dataset.to_vec();
    let n = dataset.len() as f64;
    for _ in 0..steps {
        let mut d_raw = vec![0.0; w.raw.len()];
        let mut d_gamma = 0.0;
        for inp in scratch.iter_mut() {
            inp.mix = w.clone();
            let out = guided_loss(inp)?;
            for (acc, d) in d_raw.iter_mut().zip(&out.d_raw) {
                *acc += d / n;
            }
            d_gamma += out.d_gamma / n;
        }
        for &h in &w.head_subset {
            w.raw[h] -= lr * d_raw[h];
        }
        w.gamma -= lr * d_gamma;
    }
    Ok(w)
}

/// Mean loss of `w` over `dataset`.
pub fn mean_loss(dataset: &[LossInput], w: &MixWeights) -> Result<f64, LossError> {
    if dataset.is_empty() {
        return Err(LossError::EmptyDataset);
    }
    let mut total = 0.0;
    for inp in dataset {
        let mut x = inp.clone();
        x.mix = w.clone();
        total += loss_value(&x)?;
    }
    Ok(total / dataset.len() as f64)
}
