//! The measurement protocol: span matching, micro/macro F-beta, PR curves,
//! threshold selection, ADE-group evaluation, document-level evaluation, and
//! cross-validation aggregation.
//!
//! Zero-denominator conventions: precision, recall, F-beta, and specificity
//! are all 0 when their denominator is 0, so aggregation stays total.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::corpus::{Document, EntityKind, EntitySpan, RelationLabel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("precision-recall curve needs at least one positive item")]
    NoPositives,
    #[error("scores and labels differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("document has no ADE groups")]
    NoGroups,
    #[error("cross-validation summary needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
}

/// Per-class confusion counts (true negatives only exist for tasks with a
/// closed universe, e.g. document-level classification).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        ClassCounts { tp, fp, fn_ }
    }

    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Exact token-range match.
    Strict,
    /// At least one shared token.
    Lenient,
}

impl MatchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchMode::Strict => "strict",
            MatchMode::Lenient => "lenient",
        }
    }
}

/// Greedy one-to-one span matching in position order. A predicted span
/// claims the first unmatched gold span of the same kind that satisfies the
/// mode's criterion; leftovers count as false positives / false negatives.
pub fn match_spans(
    pred: &[EntitySpan],
    gold: &[EntitySpan],
    mode: MatchMode,
) -> BTreeMap<EntityKind, ClassCounts> {
    let mut counts: BTreeMap<EntityKind, ClassCounts> = BTreeMap::new();
    counts.insert(EntityKind::Drug, ClassCounts::default());
    counts.insert(EntityKind::Disorder, ClassCounts::default());

    let mut pred_sorted: Vec<&EntitySpan> = pred.iter().collect();
    pred_sorted.sort_by_key(|s| (s.token_start, s.token_end));
    let mut gold_sorted: Vec<&EntitySpan> = gold.iter().collect();
    gold_sorted.sort_by_key(|s| (s.token_start, s.token_end));

    let mut gold_used = vec![false; gold_sorted.len()];
    for p in &pred_sorted {
        let matched = gold_sorted.iter().enumerate().position(|(gi, g)| {
            !gold_used[gi]
                && g.kind == p.kind
                && match mode {
                    MatchMode::Strict => {
                        g.token_start == p.token_start && g.token_end == p.token_end
                    }
                    MatchMode::Lenient => g.overlap(p) > 0,
                }
        });
        let entry = counts.entry(p.kind).or_default();
        match matched {
            Some(gi) => {
                gold_used[gi] = true;
                entry.tp += 1;
            }
            None => entry.fp += 1,
        }
    }
    for (gi, g) in gold_sorted.iter().enumerate() {
        if !gold_used[gi] {
            counts.entry(g.kind).or_default().fn_ += 1;
        }
    }
    counts
}

/// Precision, recall, and F-beta for one class.
pub fn prf(counts: &ClassCounts, beta: f64) -> (f64, f64, f64) {
    let p = ratio(counts.tp, counts.tp + counts.fp);
    let r = ratio(counts.tp, counts.tp + counts.fn_);
    (p, r, f_beta(p, r, beta))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfSummary {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Micro (pooled counts) and macro (averaged per-class metrics) summaries.
pub fn aggregate<'a>(
    per_class: impl IntoIterator<Item = &'a ClassCounts>,
    beta: f64,
) -> (PrfSummary, PrfSummary) {
    let mut pooled = ClassCounts::default();
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f = 0.0;
    let mut n = 0usize;
    for counts in per_class {
        pooled.add(counts);
        let (p, r, f) = prf(counts, beta);
        macro_p += p;
        macro_r += r;
        macro_f += f;
        n += 1;
    }
    assert!(n > 0, "aggregate needs at least one class");
    let (micro_p, micro_r, micro_f) = prf(&pooled, beta);
    (
        PrfSummary {
            precision: micro_p,
            recall: micro_r,
            f: micro_f,
        },
        PrfSummary {
            precision: macro_p / n as f64,
            recall: macro_r / n as f64,
            f: macro_f / n as f64,
        },
    )
}

/// Confusion counts for the two classes of a binary task, in the order
/// `[positive, negative]`. Every item carries exactly one of the two labels,
/// which is what makes micro precision, recall, and F coincide.
pub fn binary_class_counts(pred: &[bool], gold: &[bool]) -> [ClassCounts; 2] {
    assert_eq!(pred.len(), gold.len());
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    [
        ClassCounts::new(tp, fp, fn_),
        ClassCounts::new(tn, fn_, fp),
    ]
}

/// One point on a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Sweeps the distinct scores in descending order; at each threshold an item
/// is predicted positive iff its score is at or above the threshold.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(MetricsError::NoPositives);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let threshold = scores[order[i]];
        // absorb all items tied at this score
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, total_pos),
        });
    }
    Ok(PrCurve { points })
}

/// The distinct-score threshold maximizing F-beta; ties go to the highest
/// threshold.
pub fn select_threshold(
    scores: &[f64],
    labels: &[bool],
    beta: f64,
) -> Result<(f64, f64), MetricsError> {
    let curve = pr_curve(scores, labels)?;
    let mut best: Option<(f64, f64)> = None;
    // points are in descending-threshold order, so strict improvement keeps
    // the highest threshold among ties
    for point in &curve.points {
        let f = f_beta(point.precision, point.recall, beta);
        if best.map_or(true, |(_, bf)| f > bf) {
            best = Some((point.threshold, f));
        }
    }
    Ok(best.expect("curve has at least one point"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupMode {
    /// A group counts as detected when at least one member relation's
    /// (drug, disorder) pair is predicted.
    Easy,
    /// A group counts as detected only when every member is predicted.
    Hard,
}

impl GroupMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupMode::Easy => "easy",
            GroupMode::Hard => "hard",
        }
    }
}

/// Number of detected groups and total groups in one document. Predicted
/// pairs are expressed in gold-entity ids; end-to-end predictions must be
/// aligned first.
pub fn count_detected_groups(
    predicted_pairs: &HashSet<(String, String)>,
    doc: &Document,
    mode: GroupMode,
) -> (usize, usize) {
    let pair_of = |relation_id: &str| -> (String, String) {
        let rel = doc
            .relations
            .iter()
            .find(|r| r.id == relation_id)
            .expect("validated documents resolve group members");
        debug_assert_eq!(rel.label, RelationLabel::Ade);
        (rel.drug_id.clone(), rel.disorder_id.clone())
    };
    let mut detected = 0;
    for group in &doc.groups {
        let hit = match mode {
            GroupMode::Easy => group
                .member_relation_ids
                .iter()
                .any(|m| predicted_pairs.contains(&pair_of(m))),
            GroupMode::Hard => group
                .member_relation_ids
                .iter()
                .all(|m| predicted_pairs.contains(&pair_of(m))),
        };
        if hit {
            detected += 1;
        }
    }
    (detected, doc.groups.len())
}

/// Fraction of the document's ADE groups detected under the given mode.
pub fn evaluate_groups(
    predicted_pairs: &HashSet<(String, String)>,
    doc: &Document,
    mode: GroupMode,
) -> Result<f64, MetricsError> {
    if doc.groups.is_empty() {
        return Err(MetricsError::NoGroups);
    }
    let (detected, total) = count_detected_groups(predicted_pairs, doc, mode);
    Ok(detected as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocumentMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
}

/// Standard binary document-level metrics with specificity = tn/(tn+fp).
pub fn evaluate_documents(predictions: &[bool], gold: &[bool]) -> DocumentMetrics {
    assert_eq!(predictions.len(), gold.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut tn = 0usize;
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    DocumentMetrics {
        precision,
        recall,
        f1: f_beta(precision, recall, 1.0),
        specificity: ratio(tn, tn + fp),
    }
}

/// Arithmetic mean and sample (n−1) standard deviation across folds.
pub fn cv_summary(per_fold_values: &[f64]) -> Result<(f64, f64), MetricsError> {
    let n = per_fold_values.len();
    if n < 2 {
        return Err(MetricsError::TooFewFolds(n));
    }
    let mean = per_fold_values.iter().sum::<f64>() / n as f64;
    let var = per_fold_values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok((mean, var.sqrt()))
}
