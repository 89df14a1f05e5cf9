//! Alignment evaluation: exact and partial-credit precision/recall/F1 per
//! alignment type, span F1, coverage, and attention correlation analysis.
//!
//! All scores are percentages.

mod correlation;
mod wilcoxon;

pub use correlation::{
    build_align_matrix, correlation_heatmap, pearson, pearson_correlation, AlignMatrix, Heatmap,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult, WILCOXON_EXACT_MAX, WILCOXON_MIN_N};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::MetricError;
use crate::extract::{AlignmentKind, AlignmentRecord, AlignmentSet};
use crate::graph::AmrGraph;

/// Raw match counts; sums associatively over sentences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Counts {
    /// Matched records (exact) or summed credit (partial).
    pub credit: f64,
    pub n_pred: usize,
    pub n_gold: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.credit += other.credit;
        self.n_pred += other.n_pred;
        self.n_gold += other.n_gold;
    }

    pub fn prf(&self) -> Prf {
        let ratio = |n: usize| if n == 0 { 0.0 } else { 100.0 * self.credit / n as f64 };
        let (p, r) = (ratio(self.n_pred), ratio(self.n_gold));
        Prf { precision: p, recall: r, f1: f1(p, r), counts: *self }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

/// Scores per alignment type plus the pooled score over all types.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub per_kind: BTreeMap<AlignmentKind, Prf>,
    pub overall: Prf,
}

impl ScoreTable {
    fn from_counts(counts: &BTreeMap<AlignmentKind, Counts>) -> Self {
        let mut total = Counts::default();
        let mut per_kind = BTreeMap::new();
        for kind in AlignmentKind::ALL {
            let c = counts.get(&kind).copied().unwrap_or_default();
            total.add(c);
            per_kind.insert(kind, c.prf());
        }
        ScoreTable { per_kind, overall: total.prf() }
    }

    pub fn kind(&self, kind: AlignmentKind) -> &Prf {
        &self.per_kind[&kind]
    }
}

/// Jaccard index; two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn token_set(r: &AlignmentRecord) -> BTreeSet<usize> {
    r.tokens.iter().copied().collect()
}

/// Partial credit: Jaccard of the unit sets times Jaccard of the token sets.
pub fn partial_credit(p: &AlignmentRecord, g: &AlignmentRecord) -> f64 {
    jaccard(&p.units(), &g.units()) * jaccard(&token_set(p), &token_set(g))
}

fn identical(p: &AlignmentRecord, g: &AlignmentRecord) -> bool {
    p.kind == g.kind && token_set(p) == token_set(g) && p.units() == g.units()
}

/// Exact-match counts for one sentence, per type. Each gold record matches at
/// most one prediction.
pub fn exact_counts(pred: &AlignmentSet, gold: &AlignmentSet) -> BTreeMap<AlignmentKind, Counts> {
    let mut counts: BTreeMap<AlignmentKind, Counts> = BTreeMap::new();
    let mut used = vec![false; gold.records.len()];
    for p in &pred.records {
        let c = counts.entry(p.kind).or_default();
        c.n_pred += 1;
        if let Some(i) = (0..gold.records.len()).find(|&i| !used[i] && identical(p, &gold.records[i])) {
            used[i] = true;
            c.credit += 1.0;
        }
    }
    for g in &gold.records {
        counts.entry(g.kind).or_default().n_gold += 1;
    }
    counts
}

/// Partial-credit counts for one sentence, per type: records of the same type
/// are paired one-to-one greedily by descending credit (ties by prediction,
/// then gold order).
pub fn partial_counts(pred: &AlignmentSet, gold: &AlignmentSet) -> BTreeMap<AlignmentKind, Counts> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.records.iter().enumerate() {
        for (j, g) in gold.records.iter().enumerate() {
            if p.kind == g.kind {
                let c = partial_credit(p, g);
                if c > 0.0 {
                    pairs.push((c, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut counts: BTreeMap<AlignmentKind, Counts> = BTreeMap::new();
    let (mut pu, mut gu) = (vec![false; pred.records.len()], vec![false; gold.records.len()]);
    for (c, i, j) in pairs {
        if !pu[i] && !gu[j] {
            pu[i] = true;
            gu[j] = true;
            counts.entry(pred.records[i].kind).or_default().credit += c;
        }
    }
    for p in &pred.records {
        counts.entry(p.kind).or_default().n_pred += 1;
    }
    for g in &gold.records {
        counts.entry(g.kind).or_default().n_gold += 1;
    }
    counts
}

/// Pairs predicted and gold sets by sentence id; the id sets must agree.
pub fn pair_sentences<'a>(
    pred: &'a [AlignmentSet],
    gold: &'a [AlignmentSet],
) -> Result<Vec<(&'a AlignmentSet, &'a AlignmentSet)>, MetricError> {
    let by_id: BTreeMap<&str, &AlignmentSet> = gold.iter().map(|g| (g.sentence_id.as_str(), g)).collect();
    if by_id.len() != gold.len() {
        return Err(MetricError::SentenceMismatch("duplicate sentence id in gold".into()));
    }
    let pred_ids: BTreeSet<&str> = pred.iter().map(|p| p.sentence_id.as_str()).collect();
    if pred_ids.len() != pred.len() {
        return Err(MetricError::SentenceMismatch("duplicate sentence id in prediction".into()));
    }
    if let Some(id) = pred_ids.symmetric_difference(&by_id.keys().copied().collect()).next() {
        return Err(MetricError::SentenceMismatch(format!("sentence `{id}` is not in both files")));
    }
    Ok(pred.iter().map(|p| (p, by_id[p.sentence_id.as_str()])).collect())
}

fn corpus_scores(
    pred: &[AlignmentSet],
    gold: &[AlignmentSet],
    f: fn(&AlignmentSet, &AlignmentSet) -> BTreeMap<AlignmentKind, Counts>,
) -> Result<ScoreTable, MetricError> {
    let mut total: BTreeMap<AlignmentKind, Counts> = BTreeMap::new();
    for (p, g) in pair_sentences(pred, gold)? {
        for (k, c) in f(p, g) {
            total.entry(k).or_default().add(c);
        }
    }
    Ok(ScoreTable::from_counts(&total))
}

/// Exact-match P/R/F1: a prediction matches a gold record with the same type,
/// the same tokens and the same units.
pub fn exact_scores(pred: &[AlignmentSet], gold: &[AlignmentSet]) -> Result<ScoreTable, MetricError> {
    corpus_scores(pred, gold, exact_counts)
}

/// Partial-credit P/R/F1 from unit and token Jaccard indices.
pub fn partial_scores(pred: &[AlignmentSet], gold: &[AlignmentSet]) -> Result<ScoreTable, MetricError> {
    corpus_scores(pred, gold, partial_counts)
}

/// F1 of exact span boundary matches, spans given as `(start, end)`.
pub fn span_f1(pred: &[(usize, usize)], gold: &[(usize, usize)]) -> f64 {
    let p: BTreeSet<_> = pred.iter().collect();
    let g: BTreeSet<_> = gold.iter().collect();
    let hit = p.intersection(&g).count() as f64;
    let prec = if p.is_empty() { 0.0 } else { 100.0 * hit / p.len() as f64 };
    let rec = if g.is_empty() { 0.0 } else { 100.0 * hit / g.len() as f64 };
    f1(prec, rec)
}

/// Spans of a set's records as `(first word, last word + 1)`, deduplicated.
pub fn record_spans(set: &AlignmentSet) -> Vec<(usize, usize)> {
    let spans: BTreeSet<(usize, usize)> = set
        .records
        .iter()
        .filter_map(|r| Some((*r.tokens.iter().min()?, *r.tokens.iter().max()? + 1)))
        .collect();
    spans.into_iter().collect()
}

/// Percentage of the graph's units aligned by `pred`; 100 for an empty graph.
pub fn coverage(pred: &AlignmentSet, g: &AmrGraph) -> f64 {
    let total = g.unit_count();
    if total == 0 {
        return 100.0;
    }
    let paths: BTreeSet<String> = g.unit_paths().into_values().collect();
    let aligned = pred.aligned_units();
    let hit = paths.iter().filter(|p| aligned.contains(p.as_str())).count();
    100.0 * hit as f64 / total as f64
}

/// Percentage of gold-aligned units that `pred` also aligns (no graph needed).
pub fn coverage_of_gold(pred: &[AlignmentSet], gold: &[AlignmentSet]) -> Result<f64, MetricError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in pair_sentences(pred, gold)? {
        let pu = p.aligned_units();
        let gu = g.aligned_units();
        total += gu.len();
        hit += gu.iter().filter(|u| pu.contains(*u)).count();
    }
    Ok(if total == 0 { 100.0 } else { 100.0 * hit as f64 / total as f64 })
}

/// Per-sentence statistic fed to the signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStat {
    /// Number of exactly matched records.
    Matches,
    /// Exact-match F1 over all types.
    F1,
}

/// One value per gold sentence, in gold order.
pub fn per_sentence_series(
    pred: &[AlignmentSet],
    gold: &[AlignmentSet],
    stat: SeriesStat,
) -> Result<Vec<f64>, MetricError> {
    let pairs = pair_sentences(pred, gold)?;
    let by_id: BTreeMap<&str, (&AlignmentSet, &AlignmentSet)> =
        pairs.into_iter().map(|(p, g)| (g.sentence_id.as_str(), (p, g))).collect();
    Ok(gold
        .iter()
        .map(|g| {
            let (p, g) = by_id[g.sentence_id.as_str()];
            let mut c = Counts::default();
            exact_counts(p, g).into_values().for_each(|x| c.add(x));
            match stat {
                SeriesStat::Matches => c.credit,
                SeriesStat::F1 => c.prf().f1,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Significance {
    pub against: String,
    pub statistic: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub exact: ScoreTable,
    pub partial: ScoreTable,
    pub span_f1: f64,
    pub coverage: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub significance: Vec<Significance>,
}

/// Full report over a corpus.
pub fn evaluate(pred: &[AlignmentSet], gold: &[AlignmentSet]) -> Result<EvalReport, MetricError> {
    let pairs = pair_sentences(pred, gold)?;
    let (mut ps, mut gs) = (Vec::new(), Vec::new());
    for (i, (p, g)) in pairs.iter().enumerate() {
        // Offset per sentence so spans of different sentences never coincide.
        let off = i << 32;
        ps.extend(record_spans(p).into_iter().map(|(a, b)| (a + off, b + off)));
        gs.extend(record_spans(g).into_iter().map(|(a, b)| (a + off, b + off)));
    }
    Ok(EvalReport {
        sentences: pairs.len(),
        exact: exact_scores(pred, gold)?,
        partial: partial_scores(pred, gold)?,
        span_f1: span_f1(&ps, &gs),
        coverage: coverage_of_gold(pred, gold)?,
        significance: Vec::new(),
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sentences: {}", self.sentences);
        let _ = writeln!(s, "{:<12} {:>7} {:>7} {:>7}   {:>7} {:>7} {:>7}   {:>6} {:>6}", "type", "P", "R", "F1", "pP", "pR", "pF1", "pred", "gold");
        let row = |s: &mut String, name: &str, e: &Prf, p: &Prf| {
            let _ = writeln!(
                s,
                "{:<12} {:>7.2} {:>7.2} {:>7.2}   {:>7.2} {:>7.2} {:>7.2}   {:>6} {:>6}",
                name, e.precision, e.recall, e.f1, p.precision, p.recall, p.f1, e.counts.n_pred, e.counts.n_gold
            );
        };
        for kind in AlignmentKind::ALL {
            row(&mut s, kind.name(), self.exact.kind(kind), self.partial.kind(kind));
        }
        row(&mut s, "all", &self.exact.overall, &self.partial.overall);
        let _ = writeln!(s, "span F1: {:.2}", self.span_f1);
        let _ = writeln!(s, "coverage: {:.2}", self.coverage);
        for sig in &self.significance {
            let _ = writeln!(s, "wilcoxon vs {}: W = {}, p = {:.4} (n = {})", sig.against, sig.statistic, sig.p, sig.n);
        }
        s
    }
}
