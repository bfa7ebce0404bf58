//! Loss terms and their gradients.
//!
//! * weighted cross-entropy on `sigmoid(s)` with per-label class-balance
//!   weights,
//! * relational hard example mining (RHEM): lesion-label pairs restricted to
//!   reliable positives and negatives are drawn with replacement in
//!   proportion to `|sigma - y|^gamma`, and their plain cross-entropy is
//!   averaged,
//! * the same weighted cross-entropy on the score propagation output,
//! * a multilabel triplet loss on unit-length embeddings, where similarity
//!   of two label sets is `|X ∩ Y|^2 / |X ∪ Y|`.
//!
//! [`combined_loss`] adds them as `wce + rhem + spl + lambda * triplet`.
//! Every gradient is taken with respect to pre-sigmoid scores or raw
//! embeddings; sampled pairs and triplets are treated as constants.

use ndarray::{Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use thiserror::Error;

use crate::labelset::LabelSet;
use crate::model::{ForwardCache, OutputGrads, ScoreSource};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

/// Hyperparameters and term switches.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Upper bound on class-balance weights.
    pub beta_clamp: f64,
    /// Focusing exponent of the RHEM difficulty.
    pub gamma: f64,
    /// RHEM pair draws per minibatch.
    pub rhem_samples: usize,
    /// Minimum label-set similarity of a triplet's positive.
    pub theta: f64,
    /// Triplet margin.
    pub mu: f64,
    /// Triplet draws per minibatch.
    pub triplets: usize,
    /// Attempts per triplet draw before it is skipped.
    pub triplet_retries: usize,
    /// Weight of the triplet term.
    pub lambda: f64,
    pub wce: bool,
    pub rhem: bool,
    pub spl: bool,
    pub triplet: bool,
    /// Draw RHEM pairs from every label instead of reliable ones only.
    pub rhem_all_labels: bool,
    /// Apply RHEM to `sigmoid(s~)` instead of `sigmoid(s)`.
    pub rhem_on_refined: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_clamp: 300.0,
            gamma: 2.0,
            rhem_samples: 10_000,
            theta: 1.0,
            mu: 0.1,
            triplets: 5000,
            triplet_retries: 10,
            lambda: 5.0,
            wce: true,
            rhem: true,
            spl: true,
            triplet: true,
            rhem_all_labels: false,
            rhem_on_refined: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let finite = [self.beta_clamp, self.gamma, self.theta, self.mu, self.lambda];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(LossError::Config("hyperparameters must be finite".into()));
        }
        if self.gamma <= 0.0 {
            return Err(LossError::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.beta_clamp <= 0.0 {
            return Err(LossError::Config("beta_clamp must be > 0".into()));
        }
        if self.lambda < 0.0 || self.mu < 0.0 {
            return Err(LossError::Config("lambda and mu must be >= 0".into()));
        }
        Ok(())
    }

    /// Only the weighted cross-entropy term.
    pub fn wce_only() -> Self {
        Self { rhem: false, spl: false, triplet: false, ..Self::default() }
    }
}

/// Per-label class-balance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    /// Labels with no positives or no negatives; their weights are 1.
    pub degenerate: Vec<usize>,
}

impl ClassWeights {
    /// `beta_p = (P + N) / 2P`, `beta_n = (P + N) / 2N`, each clamped to at
    /// most `clamp`.
    pub fn from_counts(counts: &[(usize, usize)], clamp: f64) -> Self {
        let mut pos = Vec::with_capacity(counts.len());
        let mut neg = Vec::with_capacity(counts.len());
        let mut degenerate = Vec::new();
        for (c, &(p, n)) in counts.iter().enumerate() {
            if p == 0 || n == 0 {
                pos.push(1.0);
                neg.push(1.0);
                degenerate.push(c);
            } else {
                let total = (p + n) as f64;
                pos.push((total / (2.0 * p as f64)).min(clamp));
                neg.push((total / (2.0 * n as f64)).min(clamp));
            }
        }
        Self { pos, neg, degenerate }
    }

    pub fn uniform(labels: usize) -> Self {
        Self { pos: vec![1.0; labels], neg: vec![1.0; labels], degenerate: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// A loss value and its gradient with respect to the term's input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
}

/// Dense 0/1 targets from label sets, `B x C`.
pub fn dense_targets(sets: &[LabelSet], labels: usize) -> Array2<f64> {
    let mut y = Array2::zeros((sets.len(), labels));
    for (i, s) in sets.iter().enumerate() {
        for c in s.iter() {
            y[[i, c]] = 1.0;
        }
    }
    y
}

fn check_shapes(probs: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<(), LossError> {
    if probs.dim() != y.dim() {
        return Err(LossError::Shape(format!("confidences {:?} vs targets {:?}", probs.dim(), y.dim())));
    }
    if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(LossError::BadConfidence(bad));
    }
    Ok(())
}

#[inline]
fn ln_clamped(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS).ln()
}

/// `-(1 / BC) sum_i sum_c [bp_c y ln(sigma) + bn_c (1 - y) ln(1 - sigma)]`,
/// with the gradient on the pre-sigmoid scores.
pub fn weighted_ce(
    probs: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    weights: &ClassWeights,
) -> Result<LossGrad, LossError> {
    check_shapes(&probs, &y)?;
    let (b, c) = probs.dim();
    if weights.len() != c {
        return Err(LossError::Shape(format!("{} weights for {c} labels", weights.len())));
    }
    if b == 0 || c == 0 {
        return Ok(LossGrad { loss: 0.0, grad: Array2::zeros((b, c)) });
    }
    let norm = 1.0 / (b * c) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((b, c));
    for i in 0..b {
        for k in 0..c {
            let p = probs[[i, k]];
            let t = y[[i, k]];
            let (bp, bn) = (weights.pos[k], weights.neg[k]);
            loss -= bp * t * ln_clamped(p) + bn * (1.0 - t) * ln_clamped(1.0 - p);
            grad[[i, k]] = -norm * (bp * t * (1.0 - p) - bn * (1.0 - t) * p);
        }
    }
    Ok(LossGrad { loss: loss * norm, grad })
}

/// Weighted cross-entropy on the score propagation output; same contract as
/// [`weighted_ce`], gradient on `s~`.
pub fn spl_loss(
    refined_probs: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    weights: &ClassWeights,
) -> Result<LossGrad, LossError> {
    weighted_ce(refined_probs, y, weights)
}

/// `|sigma - y|^gamma` element-wise.
pub fn rhem_difficulty(probs: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let mut out = probs.to_owned();
    ndarray::Zip::from(&mut out).and(&y).for_each(|d, &t| *d = (*d - t).abs().powf(gamma));
    out
}

/// Lesion-label pairs drawn for RHEM, with multiplicities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RhemDraws {
    /// `(sample, label, times drawn)`, sorted by sample then label.
    pub pairs: Vec<(usize, usize, usize)>,
    /// Total number of draws (`S`, or 0 when nothing could be drawn).
    pub total: usize,
    /// True when the support (reliable pairs with positive difficulty) was
    /// empty.
    pub empty_support: bool,
}

/// Draws `draws` pairs with replacement, with probability proportional to
/// `difficulty` over pairs where `mask` is set.
pub fn sample_rhem<R: Rng + ?Sized>(
    difficulty: ArrayView2<'_, f64>,
    mask: &[LabelSet],
    draws: usize,
    rng: &mut R,
) -> Result<RhemDraws, LossError> {
    let (b, _) = difficulty.dim();
    if mask.len() != b {
        return Err(LossError::Shape(format!("{} mask rows for {b} samples", mask.len())));
    }
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (i, m) in mask.iter().enumerate() {
        for c in m.iter() {
            let d = difficulty[[i, c]];
            if d > 0.0 && d.is_finite() {
                support.push((i, c));
                weights.push(d);
            }
        }
    }
    if support.is_empty() || draws == 0 {
        return Ok(RhemDraws { pairs: Vec::new(), total: 0, empty_support: support.is_empty() });
    }
    let dist = WeightedIndex::new(&weights).map_err(|e| LossError::Config(e.to_string()))?;
    let mut counts = vec![0usize; support.len()];
    for _ in 0..draws {
        counts[dist.sample(rng)] += 1;
    }
    let pairs = support.into_iter().zip(counts).filter(|&(_, k)| k > 0).map(|((i, c), k)| (i, c, k)).collect();
    Ok(RhemDraws { pairs, total: draws, empty_support: false })
}

/// Unweighted mean cross-entropy over drawn pairs; a pair drawn `k` times
/// counts `k` times. Zero when nothing was drawn.
pub fn rhem_loss_from_draws(
    probs: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    draws: &RhemDraws,
) -> Result<LossGrad, LossError> {
    check_shapes(&probs, &y)?;
    let mut grad = Array2::zeros(probs.dim());
    if draws.total == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let inv = 1.0 / draws.total as f64;
    let mut loss = 0.0;
    for &(i, c, k) in &draws.pairs {
        let p = probs[[i, c]];
        let t = y[[i, c]];
        let w = k as f64 * inv;
        loss -= w * (t * ln_clamped(p) + (1.0 - t) * ln_clamped(1.0 - p));
        grad[[i, c]] += w * (p - t);
    }
    Ok(LossGrad { loss, grad })
}

/// Draws pairs from the reliable `mask` in proportion to their difficulty
/// and returns the mean cross-entropy over them together with the draws.
pub fn rhem_loss<R: Rng + ?Sized>(
    probs: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    mask: &[LabelSet],
    config: &LossConfig,
    rng: &mut R,
) -> Result<(LossGrad, RhemDraws), LossError> {
    check_shapes(&probs, &y)?;
    let delta = rhem_difficulty(probs, y, config.gamma);
    let draws = sample_rhem(delta.view(), mask, config.rhem_samples, rng)?;
    let lg = rhem_loss_from_draws(probs, y, &draws)?;
    Ok((lg, draws))
}

/// `|X ∩ Y|^2 / |X ∪ Y|`, and 0 when both sets are empty.
pub fn similarity(x: &LabelSet, y: &LabelSet) -> f64 {
    let union = x.union_len(y);
    if union == 0 {
        return 0.0;
    }
    let inter = x.intersection_len(y) as f64;
    inter * inter / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub similar: usize,
    pub dissimilar: usize,
    pub sim_similar: f64,
    pub sim_dissimilar: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Draws up to `config.triplets` triplets from a minibatch.
///
/// Each draw picks a uniform anchor among samples with at least one label,
/// a uniform `B != A` with `sim(A, B) >= theta`, and a uniform `C` with
/// `sim(A, C) < sim(A, B)`. An attempt that finds no `B` or no `C` is retried
/// up to `config.triplet_retries` times, then the draw is skipped.
pub fn sample_triplets<R: Rng + ?Sized>(labels: &[LabelSet], config: &LossConfig, rng: &mut R) -> TripletBatch {
    let n = labels.len();
    let anchors: Vec<usize> = (0..n).filter(|&i| !labels[i].is_empty()).collect();
    if n < 3 || anchors.is_empty() {
        return TripletBatch::default();
    }
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = similarity(&labels[i], &labels[j]);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let mut out = Vec::with_capacity(config.triplets);
    let mut similar = Vec::with_capacity(n);
    let mut dissimilar = Vec::with_capacity(n);
    for _ in 0..config.triplets {
        for _attempt in 0..config.triplet_retries.max(1) {
            let a = anchors[rng.random_range(0..anchors.len())];
            let row = &sim[a * n..(a + 1) * n];
            similar.clear();
            similar.extend((0..n).filter(|&j| j != a && row[j] >= config.theta));
            if similar.is_empty() {
                continue;
            }
            let b = similar[rng.random_range(0..similar.len())];
            dissimilar.clear();
            dissimilar.extend((0..n).filter(|&j| j != a && row[j] < row[b]));
            if dissimilar.is_empty() {
                continue;
            }
            let c = dissimilar[rng.random_range(0..dissimilar.len())];
            out.push(Triplet { anchor: a, similar: b, dissimilar: c, sim_similar: row[b], sim_dissimilar: row[c] });
            break;
        }
    }
    TripletBatch { triplets: out }
}

/// `(1 / T) sum max(0, d(A, B) - d(A, C) + mu)` with Euclidean `d`, where
/// `T` is the number of triplets in the batch. Gradient on the embeddings;
/// inactive triplets contribute nothing.
pub fn triplet_loss(embeddings: ArrayView2<'_, f64>, batch: &TripletBatch, mu: f64) -> Result<LossGrad, LossError> {
    let (n, e) = embeddings.dim();
    let mut grad = Array2::zeros((n, e));
    if batch.is_empty() {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    if let Some(t) = batch.triplets.iter().find(|t| t.anchor.max(t.similar).max(t.dissimilar) >= n) {
        return Err(LossError::Shape(format!("triplet {t:?} indexes past {n} embeddings")));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut diff_ab = vec![0.0; e];
    let mut diff_ac = vec![0.0; e];
    for t in &batch.triplets {
        let (a, b, c) = (embeddings.row(t.anchor), embeddings.row(t.similar), embeddings.row(t.dissimilar));
        let mut d_ab = 0.0;
        let mut d_ac = 0.0;
        for k in 0..e {
            diff_ab[k] = a[k] - b[k];
            diff_ac[k] = a[k] - c[k];
            d_ab += diff_ab[k] * diff_ab[k];
            d_ac += diff_ac[k] * diff_ac[k];
        }
        let (d_ab, d_ac) = (d_ab.sqrt(), d_ac.sqrt());
        let margin = d_ab - d_ac + mu;
        if margin <= 0.0 {
            continue;
        }
        loss += margin * inv;
        // d|u|/du = u / |u|, subgradient 0 at u = 0.
        let s_ab = if d_ab > 0.0 { inv / d_ab } else { 0.0 };
        let s_ac = if d_ac > 0.0 { inv / d_ac } else { 0.0 };
        for k in 0..e {
            let g_ab = s_ab * diff_ab[k];
            let g_ac = s_ac * diff_ac[k];
            grad[[t.anchor, k]] += g_ab - g_ac;
            grad[[t.similar, k]] -= g_ab;
            grad[[t.dissimilar, k]] += g_ac;
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Per-term values of one combined loss evaluation. Disabled terms are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub wce: f64,
    pub rhem: f64,
    pub spl: f64,
    /// Unweighted triplet loss (the total uses `lambda * triplet`).
    pub triplet: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.wce, self.rhem, self.spl, self.triplet, self.total].iter().all(|v| v.is_finite())
    }
}

/// Inputs shared by every term of the combined loss for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub cache: &'a ForwardCache,
    /// Dense targets, `B x C`.
    pub targets: ArrayView2<'a, f64>,
    pub weights: &'a ClassWeights,
}

/// Combined loss with fixed RHEM draws and triplets.
pub fn combined_loss_with_samples(
    inputs: LossInputs<'_>,
    draws: &RhemDraws,
    triplets: &TripletBatch,
    config: &LossConfig,
) -> Result<(LossBreakdown, OutputGrads), LossError> {
    let cache = inputs.cache;
    let (b, c) = cache.scores.dim();
    let mut breakdown = LossBreakdown::default();
    let mut d_scores: Option<Array2<f64>> = None;
    let mut d_refined: Option<Array2<f64>> = None;
    let accumulate = |slot: &mut Option<Array2<f64>>, g: Array2<f64>| match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    };

    if config.wce {
        let lg = weighted_ce(cache.probs.view(), inputs.targets, inputs.weights)?;
        breakdown.wce = lg.loss;
        accumulate(&mut d_scores, lg.grad);
    }
    if config.rhem {
        let probs = if config.rhem_on_refined { &cache.refined_probs } else { &cache.probs };
        let lg = rhem_loss_from_draws(probs.view(), inputs.targets, draws)?;
        breakdown.rhem = lg.loss;
        if config.rhem_on_refined {
            accumulate(&mut d_refined, lg.grad);
        } else {
            accumulate(&mut d_scores, lg.grad);
        }
    }
    if config.spl {
        let lg = spl_loss(cache.refined_probs.view(), inputs.targets, inputs.weights)?;
        breakdown.spl = lg.loss;
        accumulate(&mut d_refined, lg.grad);
    }
    let mut d_embedding = None;
    if config.triplet {
        let mut lg = triplet_loss(cache.embedding.view(), triplets, config.mu)?;
        breakdown.triplet = lg.loss;
        if config.lambda != 0.0 {
            lg.grad.mapv_inplace(|g| g * config.lambda);
            d_embedding = Some(lg.grad);
        }
    }
    breakdown.total = breakdown.wce + breakdown.rhem + breakdown.spl + config.lambda * breakdown.triplet;
    debug_assert!(d_scores.as_ref().is_none_or(|g| g.dim() == (b, c)));
    Ok((breakdown, OutputGrads { scores: d_scores, refined: d_refined, embedding: d_embedding }))
}

/// Reliable mask for RHEM: expanded positives plus their reliable negatives,
/// or every label when `config.rhem_all_labels` is set.
pub fn rhem_mask(positives: &[LabelSet], reliable_negatives: &[LabelSet], config: &LossConfig) -> Vec<LabelSet> {
    positives
        .iter()
        .zip(reliable_negatives)
        .map(|(p, n)| if config.rhem_all_labels { LabelSet::full(p.width()) } else { p.union(n) })
        .collect()
}

/// Draws RHEM pairs (from the confidences selected by the config) and
/// triplets, then evaluates [`combined_loss_with_samples`].
pub fn combined_loss<R: Rng + ?Sized>(
    inputs: LossInputs<'_>,
    labels: &[LabelSet],
    mask: &[LabelSet],
    config: &LossConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, OutputGrads, RhemDraws, TripletBatch), LossError> {
    config.validate()?;
    let draws = if config.rhem {
        let source = if config.rhem_on_refined { ScoreSource::Refined } else { ScoreSource::Raw };
        let probs = inputs.cache.confidences(source);
        let delta = rhem_difficulty(probs.view(), inputs.targets, config.gamma);
        sample_rhem(delta.view(), mask, config.rhem_samples, rng)?
    } else {
        RhemDraws::default()
    };
    let triplets = if config.triplet { sample_triplets(labels, config, rng) } else { TripletBatch::default() };
    let (breakdown, grads) = combined_loss_with_samples(inputs, &draws, &triplets, config)?;
    Ok((breakdown, grads, draws, triplets))
}
