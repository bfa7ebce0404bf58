//! Per-label ranking and decision metrics, threshold calibration and
//! embedding retrieval.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::dataset::{Dataset, LabelView, Split};
use crate::labelset::LabelSet;
use crate::model::{self, ModelError, ModelParams, ScoreSource};
use crate::ontology::Category;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split `{0}` has no samples")]
    EmptySplit(&'static str),
    #[error("{0} thresholds for {1} labels")]
    Thresholds(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mann-Whitney AUC: `(concordant + 0.5 * tied) / (P * N)` over all
/// positive-negative pairs. `None` when either class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk tie groups in ascending order; each positive beats every negative
    // in earlier groups and ties with negatives in its own group.
    let mut negatives_below = 0u64;
    let mut twice_credit = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let group_neg = (j - i) as u64 - group_pos;
        twice_credit += group_pos * (2 * negatives_below + group_neg);
        negatives_below += group_neg;
        i = j;
    }
    Some(twice_credit as f64 / (2.0 * pos as f64 * neg as f64))
}

/// `2TP / (2TP + FP + FN)`, 0 when nothing is predicted or true.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Outcome of calibrating one label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    /// Validation F1 at `threshold`.
    pub f1: f64,
    /// The label had no validation positives; `threshold` is 1.
    pub no_positives: bool,
}

/// Threshold strictly above every score in `[0, 1]`.
fn above_all(max: f64) -> f64 {
    if max < 1.0 {
        1.0
    } else {
        f64::from_bits(max.to_bits() + 1)
    }
}

/// Picks the threshold maximizing F1 under the `score >= threshold` rule.
/// Candidates are 0, the midpoints between adjacent distinct scores and a
/// value above the maximum; the lowest of equally good candidates wins.
pub fn calibrate_label(scores: &[f64], labels: &[bool]) -> Calibration {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Calibration { threshold: 1.0, f1: 0.0, no_positives: true };
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ascending sweep: at candidate t every sample with score >= t is
    // predicted positive. Start with everything predicted positive.
    let mut tp = positives;
    let mut fp = scores.len() - positives;
    let mut best = Calibration { threshold: 0.0, f1: f1_from_counts(tp, fp, 0), no_positives: false };
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            if labels[order[j]] {
                tp -= 1;
            } else {
                fp -= 1;
            }
            j += 1;
        }
        let threshold = if j < order.len() { 0.5 * (s + scores[order[j]]) } else { above_all(s) };
        let f1 = f1_from_counts(tp, fp, positives - tp);
        if f1 > best.f1 {
            best = Calibration { threshold, f1, no_positives: false };
        }
        i = j;
    }
    best
}

/// Calibrates every column of `confidences` against `truth`.
pub fn calibrate_thresholds(confidences: ArrayView2<'_, f64>, truth: &[LabelSet]) -> Vec<Calibration> {
    assert_eq!(confidences.nrows(), truth.len(), "confidences and truth differ in length");
    (0..confidences.ncols())
        .map(|c| {
            let col: Vec<f64> = confidences.column(c).to_vec();
            let y: Vec<bool> = truth.iter().map(|t| t.contains(c)).collect();
            calibrate_label(&col, &y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Per-label precision, recall and F1 of `decided` against `truth`.
pub fn prf1(decided: &[LabelSet], truth: &[LabelSet], labels: usize) -> Vec<Prf> {
    assert_eq!(decided.len(), truth.len(), "decisions and truth differ in length");
    let mut counts = vec![(0usize, 0usize, 0usize); labels];
    for (d, t) in decided.iter().zip(truth) {
        for c in d.iter() {
            if t.contains(c) {
                counts[c].0 += 1;
            } else {
                counts[c].1 += 1;
            }
        }
        for c in t.difference(d).iter() {
            counts[c].2 += 1;
        }
    }
    counts.into_iter().map(|(tp, fp, fn_)| Prf::from_counts(tp, fp, fn_)).collect()
}

/// Mean number of labels shared between `query` and each retrieved set;
/// 0 for an empty list.
pub fn acg(query: &LabelSet, retrieved: &[LabelSet]) -> f64 {
    if retrieved.is_empty() {
        return 0.0;
    }
    let total: usize = retrieved.iter().map(|r| query.intersection_len(r)).sum();
    total as f64 / retrieved.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// Gallery positions, nearest first.
    pub ranked: Vec<usize>,
    /// Fewer than `k` candidates remained after patient exclusion.
    pub short: bool,
}

/// The `k` gallery rows nearest to `query` in Euclidean distance, skipping
/// rows whose patient equals `query_patient`. Ties keep gallery order.
pub fn retrieve(
    query: &[f64],
    query_patient: &str,
    gallery: ArrayView2<'_, f64>,
    gallery_patients: &[&str],
    k: usize,
) -> Retrieval {
    assert_eq!(gallery.nrows(), gallery_patients.len(), "gallery rows and patients differ in length");
    let mut scored: Vec<(f64, usize)> = gallery
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| gallery_patients[*i] != query_patient)
        .map(|(i, row)| {
            let d2: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    let short = scored.len() < k;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Retrieval { ranked: scored.into_iter().map(|(_, i)| i).collect(), short }
}

/// Feature matrix of the given sample indices.
pub fn features(ds: &Dataset, idx: &[usize]) -> Array2<f64> {
    let mut x = Array2::zeros((idx.len(), ds.dim()));
    for (r, &i) in idx.iter().enumerate() {
        for (k, &v) in ds.samples()[i].features.iter().enumerate() {
            x[[r, k]] = v;
        }
    }
    x
}

/// Ground truth of a sample under `view`, closed under ancestors. Falls
/// back to expanded mined labels when clean labels are missing.
pub fn truth_labels(ds: &Dataset, idx: usize, view: LabelView) -> LabelSet {
    let s = ds.labels(idx, view).unwrap_or(&ds.samples()[idx].expanded_labels);
    ds.ontology().expand(s)
}

/// Labels calibration is fitted against: mined labels, expanded if the
/// model was trained with expansion.
pub fn calibration_labels(ds: &Dataset, idx: usize, expand: bool) -> LabelSet {
    let s = &ds.samples()[idx];
    if expand {
        s.expanded_labels.clone()
    } else {
        s.mined_labels.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub score_source: ScoreSource,
    pub expand_decisions: bool,
    pub truth: LabelView,
    /// Retrieval depth; `None` skips retrieval.
    pub retrieval_k: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { score_source: ScoreSource::Refined, expand_decisions: true, truth: LabelView::Clean, retrieval_k: None }
    }
}

/// Fits per-label thresholds on the validation split.
pub fn calibrate(params: &ModelParams, ds: &Dataset, options: &EvalOptions) -> Result<Vec<Calibration>, EvalError> {
    let idx = ds.split_indices(Split::Val);
    if idx.is_empty() {
        return Err(EvalError::EmptySplit(Split::Val.as_str()));
    }
    let cache = model::forward(params, features(ds, &idx).view())?;
    let truth: Vec<LabelSet> = idx.iter().map(|&i| calibration_labels(ds, i, options.expand_decisions)).collect();
    Ok(calibrate_thresholds(cache.confidences(options.score_source).view(), &truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMetrics {
    pub label: usize,
    pub name: String,
    pub category: Category,
    /// `None` when the test split has only one class for this label.
    pub auc: Option<f64>,
    pub prf: Prf,
    pub threshold: f64,
    /// Test positives under the truth view.
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSummary {
    pub k: usize,
    pub acg: f64,
    pub queries: usize,
    /// Queries that got fewer than `k` results.
    pub short_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub score_source: ScoreSource,
    pub expand_decisions: bool,
    pub truth: LabelView,
    pub samples: usize,
    pub labels: Vec<LabelMetrics>,
    pub macro_auc: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Mean AUC per category, `None` when no label of it has a defined AUC.
    pub category_auc: Vec<(Category, Option<f64>)>,
    /// Labels without test positives; left out of the P/R/F1 averages.
    pub absent_labels: Vec<usize>,
    /// Labels whose AUC is undefined; left out of the AUC averages.
    pub auc_undefined: Vec<usize>,
    /// Labels calibrated without validation positives.
    pub uncalibrated: Vec<usize>,
    pub retrieval: Option<RetrievalSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn view_name(view: LabelView) -> &'static str {
    match view {
        LabelView::Mined => "mined",
        LabelView::Expanded => "expanded",
        LabelView::Clean => "clean",
    }
}

/// Scores the test split with calibrated thresholds.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    calibration: &[Calibration],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let c = ds.num_labels();
    if calibration.len() != c {
        return Err(EvalError::Thresholds(calibration.len(), c));
    }
    let idx = ds.split_indices(Split::Test);
    if idx.is_empty() {
        return Err(EvalError::EmptySplit(Split::Test.as_str()));
    }
    let cache = model::forward(params, features(ds, &idx).view())?;
    let conf = cache.confidences(options.score_source);
    let thresholds: Vec<f64> = calibration.iter().map(|k| k.threshold).collect();
    let ontology = options.expand_decisions.then(|| ds.ontology());
    let decided = model::decide(conf.view(), &thresholds, ontology);
    let truth: Vec<LabelSet> = idx.iter().map(|&i| truth_labels(ds, i, options.truth)).collect();
    let prf = prf1(&decided, &truth, c);

    let mut labels = Vec::with_capacity(c);
    for (label, prf) in prf.into_iter().enumerate() {
        let y: Vec<bool> = truth.iter().map(|t| t.contains(label)).collect();
        let col: Vec<f64> = conf.column(label).to_vec();
        labels.push(LabelMetrics {
            label,
            name: ds.ontology().name(label).to_string(),
            category: ds.ontology().category(label),
            auc: auc(&col, &y),
            prf,
            threshold: thresholds[label],
            positives: y.iter().filter(|&&v| v).count(),
        });
    }
    let present: Vec<&LabelMetrics> = labels.iter().filter(|m| m.positives > 0).collect();
    let retrieval = match options.retrieval_k {
        Some(k) => Some(retrieval_summary(&cache.embedding, ds, &idx, &truth, k)),
        None => None,
    };
    Ok(EvalReport {
        score_source: options.score_source,
        expand_decisions: options.expand_decisions,
        truth: options.truth,
        samples: idx.len(),
        macro_auc: mean(labels.iter().filter_map(|m| m.auc)).unwrap_or(0.0),
        macro_precision: mean(present.iter().map(|m| m.prf.precision)).unwrap_or(0.0),
        macro_recall: mean(present.iter().map(|m| m.prf.recall)).unwrap_or(0.0),
        macro_f1: mean(present.iter().map(|m| m.prf.f1)).unwrap_or(0.0),
        category_auc: Category::ALL
            .iter()
            .map(|&cat| (cat, mean(labels.iter().filter(|m| m.category == cat).filter_map(|m| m.auc))))
            .collect(),
        absent_labels: labels.iter().filter(|m| m.positives == 0).map(|m| m.label).collect(),
        auc_undefined: labels.iter().filter(|m| m.auc.is_none()).map(|m| m.label).collect(),
        uncalibrated: calibration.iter().enumerate().filter(|(_, k)| k.no_positives).map(|(i, _)| i).collect(),
        labels,
        retrieval,
    })
}

/// Mean ACG@`k` over `split`: every sample with a non-empty truth set
/// queries the rest of the split, excluding its own patient.
pub fn evaluate_retrieval(
    params: &ModelParams,
    ds: &Dataset,
    split: Split,
    truth: LabelView,
    k: usize,
) -> Result<RetrievalSummary, EvalError> {
    let idx = ds.split_indices(split);
    if idx.is_empty() {
        return Err(EvalError::EmptySplit(split.as_str()));
    }
    let cache = model::forward(params, features(ds, &idx).view())?;
    let truth: Vec<LabelSet> = idx.iter().map(|&i| truth_labels(ds, i, truth)).collect();
    Ok(retrieval_summary(&cache.embedding, ds, &idx, &truth, k))
}

fn retrieval_summary(
    embedding: &Array2<f64>,
    ds: &Dataset,
    idx: &[usize],
    truth: &[LabelSet],
    k: usize,
) -> RetrievalSummary {
    let patients: Vec<&str> = idx.iter().map(|&i| ds.samples()[i].patient_id.as_str()).collect();
    let mut total = 0.0;
    let mut queries = 0;
    let mut short = 0;
    for q in 0..idx.len() {
        if truth[q].is_empty() {
            continue;
        }
        let qrow = embedding.row(q).to_vec();
        let hit = retrieve(&qrow, patients[q], embedding.view(), &patients, k);
        let sets: Vec<LabelSet> = hit.ranked.iter().map(|&g| truth[g].clone()).collect();
        total += acg(&truth[q], &sets);
        queries += 1;
        short += usize::from(hit.short);
    }
    RetrievalSummary { k, acg: if queries == 0 { 0.0 } else { total / queries as f64 }, queries, short_queries: short }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn fmt_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl EvalReport {
    /// Human-readable per-label table followed by a summary block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.labels.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:<9}  {:>6}  {:>6}  {:>6}  {:>6}  {:>9}  {:>5}",
            "id", "label", "category", "auc", "prec", "recall", "f1", "threshold", "pos"
        );
        for m in &self.labels {
            let _ = writeln!(
                out,
                "{:>4}  {:<width$}  {:<9}  {:>6}  {:>6.4}  {:>6.4}  {:>6.4}  {:>9.4}  {:>5}",
                m.label,
                m.name,
                m.category.as_str(),
                fmt_opt(m.auc),
                m.prf.precision,
                m.prf.recall,
                m.prf.f1,
                m.threshold,
                m.positives
            );
        }
        out.push('\n');
        let _ = writeln!(out, "samples          {}", self.samples);
        let _ = writeln!(out, "truth            {}", view_name(self.truth));
        let _ = writeln!(out, "score source     {}", self.score_source.as_str());
        let _ = writeln!(out, "expand decisions {}", self.expand_decisions);
        let _ = writeln!(out, "macro auc        {:.4}", self.macro_auc);
        let _ = writeln!(out, "macro precision  {:.4}", self.macro_precision);
        let _ = writeln!(out, "macro recall     {:.4}", self.macro_recall);
        let _ = writeln!(out, "macro f1         {:.4}", self.macro_f1);
        for (cat, v) in &self.category_auc {
            let _ = writeln!(out, "auc {:<12} {}", cat.as_str(), fmt_opt(*v));
        }
        if let Some(r) = &self.retrieval {
            let _ = writeln!(
                out,
                "acg@{}            {:.4} over {} queries ({} short)",
                r.k, r.acg, r.queries, r.short_queries
            );
        }
        let _ = writeln!(out, "absent labels    [{}]", fmt_ids(&self.absent_labels));
        let _ = writeln!(out, "auc undefined    [{}]", fmt_ids(&self.auc_undefined));
        let _ = writeln!(out, "uncalibrated     [{}]", fmt_ids(&self.uncalibrated));
        out
    }

    /// `key=value` lines with full-precision numbers.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "truth={}", view_name(self.truth));
        let _ = writeln!(out, "score_source={}", self.score_source.as_str());
        let _ = writeln!(out, "expand_decisions={}", self.expand_decisions);
        let _ = writeln!(out, "macro_auc={:?}", self.macro_auc);
        let _ = writeln!(out, "macro_precision={:?}", self.macro_precision);
        let _ = writeln!(out, "macro_recall={:?}", self.macro_recall);
        let _ = writeln!(out, "macro_f1={:?}", self.macro_f1);
        for (cat, v) in &self.category_auc {
            let _ =
                writeln!(out, "category_auc.{}={}", cat.as_str(), v.map_or_else(|| "nan".into(), |v| format!("{v:?}")));
        }
        if let Some(r) = &self.retrieval {
            let _ = writeln!(out, "acg_k={}", r.k);
            let _ = writeln!(out, "acg={:?}", r.acg);
            let _ = writeln!(out, "acg_queries={}", r.queries);
            let _ = writeln!(out, "acg_short_queries={}", r.short_queries);
        }
        let _ = writeln!(out, "absent_labels={}", fmt_ids(&self.absent_labels));
        let _ = writeln!(out, "auc_undefined={}", fmt_ids(&self.auc_undefined));
        let _ = writeln!(out, "uncalibrated={}", fmt_ids(&self.uncalibrated));
        for m in &self.labels {
            let p = format!("label.{}", m.label);
            let _ = writeln!(out, "{p}.name={}", m.name);
            let _ = writeln!(out, "{p}.auc={}", m.auc.map_or_else(|| "nan".into(), |v| format!("{v:?}")));
            let _ = writeln!(out, "{p}.precision={:?}", m.prf.precision);
            let _ = writeln!(out, "{p}.recall={:?}", m.prf.recall);
            let _ = writeln!(out, "{p}.f1={:?}", m.prf.f1);
            let _ = writeln!(out, "{p}.threshold={:?}", m.threshold);
            let _ = writeln!(out, "{p}.positives={}", m.positives);
        }
        out
    }
}

/// Lesion ids of the `k` nearest test-split lesions from other patients.
pub fn retrieve_lesions(
    params: &ModelParams,
    ds: &Dataset,
    query: usize,
    gallery_split: Split,
    k: usize,
) -> Result<(Vec<String>, bool), EvalError> {
    let gallery = ds.split_indices(gallery_split);
    let q = model::forward(params, features(ds, &[query]).view())?;
    let g = model::forward(params, features(ds, &gallery).view())?;
    let patients: Vec<&str> = gallery.iter().map(|&i| ds.samples()[i].patient_id.as_str()).collect();
    let qrow = q.embedding.row(0).to_vec();
    let hit = retrieve(&qrow, &ds.samples()[query].patient_id, g.embedding.view(), &patients, k);
    let ids = hit.ranked.iter().map(|&r| ds.samples()[gallery[r]].lesion_id.clone()).collect();
    Ok((ids, hit.short))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, false, true]), Some(0.5));
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.0], &[true, true, false, false]), Some(1.0));
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(auc(&[0.3, 0.4], &[true, true]), None);
    }

    #[test]
    fn calibration_separable() {
        let k = calibrate_label(&[0.9, 0.9, 0.1, 0.1], &[true, true, false, false]);
        assert_eq!(k.f1, 1.0);
        assert!(k.threshold > 0.1 && k.threshold <= 0.9);
    }

    #[test]
    fn calibration_identical_scores() {
        let s = [0.4; 5];
        let y = [true, false, true, false, false];
        let k = calibrate_label(&s, &y);
        // All positive: F1 = 4/7; all negative: 0.
        assert_eq!(k.f1, f1_from_counts(2, 3, 0));
        assert_eq!(k.threshold, 0.0);
    }

    #[test]
    fn calibration_without_positives() {
        let k = calibrate_label(&[0.2, 0.7], &[false, false]);
        assert!(k.no_positives);
        assert_eq!(k.threshold, 1.0);
    }

    #[test]
    fn calibration_threshold_above_unit_score() {
        // The all-negative candidate must exclude a score of exactly 1.
        assert!(above_all(1.0) > 1.0);
        assert_eq!(above_all(0.7), 1.0);
        let k = calibrate_label(&[1.0, 0.2], &[true, false]);
        assert_eq!((k.threshold, k.f1), (0.6, 1.0));
        let k = calibrate_label(&[1.0, 1.0], &[true, false]);
        assert_eq!(k.threshold, 0.0);
    }

    #[test]
    fn prf_conventions() {
        let truth = vec![LabelSet::from_ids(2, [0]), LabelSet::from_ids(2, [0, 1])];
        let perfect = prf1(&truth, &truth, 2);
        assert!(perfect.iter().all(|p| p.precision == 1.0 && p.recall == 1.0 && p.f1 == 1.0));
        let none = prf1(&[LabelSet::empty(2), LabelSet::empty(2)], &truth, 2);
        assert!(none.iter().all(|p| p.precision == 0.0 && p.recall == 0.0 && p.f1 == 0.0));
    }

    #[test]
    fn acg_examples() {
        let q = LabelSet::from_ids(4, [0, 1, 2]);
        assert_eq!(acg(&q, &[LabelSet::from_ids(4, [0, 1]), LabelSet::from_ids(4, [2])]), 1.5);
        assert_eq!(acg(&q, &[q.clone(), q.clone()]), 3.0);
        assert_eq!(acg(&q, &[LabelSet::from_ids(4, [3])]), 0.0);
    }

    #[test]
    fn retrieval_skips_own_patient() {
        let g = ndarray::array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]];
        let r = retrieve(&[0.0, 0.0], "p1", g.view(), &["p1", "p2", "p3"], 5);
        assert_eq!(r.ranked, vec![1, 2]);
        assert!(r.short);
        let r = retrieve(&[0.0, 0.0], "p1", g.view(), &["p1", "p2", "p1"], 1);
        assert_eq!(r.ranked, vec![1]);
        assert!(!r.short);
    }
}
