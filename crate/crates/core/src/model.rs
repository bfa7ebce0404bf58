//! Two-layer scorer over supplied feature vectors.
//!
//! ```text
//! h  = relu(x W1 + b1)
//! s  = h Ws + bs            label scores
//! s~ = W s                  score propagation, W is C x C, starts at identity
//! e  = normalize(h We + be) unit-length embedding
//! ```
//!
//! Gradients are derived by hand in [`backward`].

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::labelset::LabelSet;
use crate::ontology::LabelOntology;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden and embedding widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 256, embed: 256 }
    }
}

/// All trainable tensors. Also used to hold gradients of the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `D x H`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `H x C`
    pub ws: Array2<f64>,
    pub bs: Array1<f64>,
    /// Score propagation matrix, `C x C`; `s~_c = sum_j W[c, j] s_j`.
    pub spl: Array2<f64>,
    /// `H x E`
    pub we: Array2<f64>,
    pub be: Array1<f64>,
}

impl ModelParams {
    /// Seeded random init: He-scaled `W1`, `1/sqrt(H)`-scaled heads, zero
    /// biases, identity score propagation.
    pub fn new(dim: usize, labels: usize, config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("finite std");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let h = config.hidden;
        let w1 = normal(dim, h, (2.0 / dim.max(1) as f64).sqrt());
        let ws = normal(h, labels, (1.0 / h.max(1) as f64).sqrt());
        let we = normal(h, config.embed, (1.0 / h.max(1) as f64).sqrt());
        Self {
            w1,
            b1: Array1::zeros(h),
            ws,
            bs: Array1::zeros(labels),
            spl: Array2::eye(labels),
            we,
            be: Array1::zeros(config.embed),
        }
    }

    pub fn zeros_like(other: &ModelParams) -> Self {
        Self {
            w1: Array2::zeros(other.w1.raw_dim()),
            b1: Array1::zeros(other.b1.raw_dim()),
            ws: Array2::zeros(other.ws.raw_dim()),
            bs: Array1::zeros(other.bs.raw_dim()),
            spl: Array2::zeros(other.spl.raw_dim()),
            we: Array2::zeros(other.we.raw_dim()),
            be: Array1::zeros(other.be.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.ws.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.we.ncols()
    }

    pub const TENSOR_NAMES: [&'static str; 7] = ["w1", "b1", "ws", "bs", "spl", "we", "be"];

    /// Row-major views of every tensor, in [`Self::TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.ws.as_slice().expect("standard layout"),
            self.bs.as_slice().expect("standard layout"),
            self.spl.as_slice().expect("standard layout"),
            self.we.as_slice().expect("standard layout"),
            self.be.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.ws.as_slice_mut().expect("standard layout"),
            self.bs.as_slice_mut().expect("standard layout"),
            self.spl.as_slice_mut().expect("standard layout"),
            self.we.as_slice_mut().expect("standard layout"),
            self.be.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    /// Post-activation hidden units, `B x H`.
    pub hidden: Array2<f64>,
    /// `s`, `B x C`.
    pub scores: Array2<f64>,
    /// `sigmoid(s)`.
    pub probs: Array2<f64>,
    /// `s~`, `B x C`.
    pub refined: Array2<f64>,
    /// `sigmoid(s~)`.
    pub refined_probs: Array2<f64>,
    /// Pre-normalization embedding, `B x E`.
    pub embed_raw: Array2<f64>,
    pub embed_norm: Array1<f64>,
    /// Unit-length embedding, `B x E`.
    pub embedding: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

pub fn forward(params: &ModelParams, batch: ArrayView2<'_, f64>) -> Result<ForwardCache, ModelError> {
    if batch.ncols() != params.input_dim() {
        return Err(ModelError::DimMismatch(format!(
            "batch has {} features, model expects {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("input batch"));
    }
    let mut hidden = batch.dot(&params.w1);
    hidden += &params.b1;
    hidden.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });

    let mut scores = hidden.dot(&params.ws);
    scores += &params.bs;
    let refined = scores.dot(&params.spl.t());
    let probs = scores.mapv(sigmoid);
    let refined_probs = refined.mapv(sigmoid);

    let mut embed_raw = hidden.dot(&params.we);
    embed_raw += &params.be;
    let embed_norm: Array1<f64> = embed_raw.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut embedding = embed_raw.clone();
    for (mut row, &n) in embedding.rows_mut().into_iter().zip(embed_norm.iter()) {
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        } else {
            row.fill(0.0);
        }
    }

    Ok(ForwardCache {
        input: batch.to_owned(),
        hidden,
        scores,
        probs,
        refined,
        refined_probs,
        embed_raw,
        embed_norm,
        embedding,
    })
}

/// Loss gradients flowing into the model outputs. `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub scores: Option<Array2<f64>>,
    pub refined: Option<Array2<f64>>,
    pub embedding: Option<Array2<f64>>,
}

/// Exact parameter gradients given gradients on `s`, `s~` and `e`.
///
/// Uses the rectifier subgradient 0 at exactly 0, and a zero gradient for a
/// sample whose raw embedding is the zero vector.
pub fn backward(params: &ModelParams, cache: &ForwardCache, upstream: &OutputGrads) -> ModelParams {
    let b = cache.batch_size();
    let c = params.num_labels();
    let mut grads = ModelParams::zeros_like(params);

    let mut d_scores = upstream.scores.clone().unwrap_or_else(|| Array2::zeros((b, c)));
    if let Some(d_ref) = &upstream.refined {
        // s~ = s W^T  =>  dW = ds~^T s,  ds += ds~ W
        grads.spl = d_ref.t().dot(&cache.scores);
        d_scores += &d_ref.dot(&params.spl);
    }

    grads.ws = cache.hidden.t().dot(&d_scores);
    grads.bs = d_scores.sum_axis(Axis(0));
    let mut d_hidden = d_scores.dot(&params.ws.t());

    if let Some(d_emb) = &upstream.embedding {
        // e = u / |u|  =>  du = (de - e (e . de)) / |u|
        let mut d_raw = Array2::<f64>::zeros(cache.embed_raw.raw_dim());
        for i in 0..b {
            let n = cache.embed_norm[i];
            if n <= 0.0 {
                continue;
            }
            let e = cache.embedding.row(i);
            let de = d_emb.row(i);
            let proj = e.dot(&de);
            Zip::from(d_raw.row_mut(i)).and(&de).and(&e).for_each(|out, &g, &ev| *out = (g - ev * proj) / n);
        }
        grads.we = cache.hidden.t().dot(&d_raw);
        grads.be = d_raw.sum_axis(Axis(0));
        d_hidden += &d_raw.dot(&params.we.t());
    }

    Zip::from(&mut d_hidden).and(&cache.hidden).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    grads.w1 = cache.input.t().dot(&d_hidden);
    grads.b1 = d_hidden.sum_axis(Axis(0));
    grads
}

/// Which score vector decisions are made from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    /// `sigmoid(s~)`, the score propagation output.
    Refined,
    /// `sigmoid(s)`, bypassing score propagation.
    Raw,
}

impl ScoreSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Refined => "refined",
            ScoreSource::Raw => "raw",
        }
    }
}

impl std::str::FromStr for ScoreSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "refined" => Ok(ScoreSource::Refined),
            "raw" => Ok(ScoreSource::Raw),
            other => Err(format!("unknown score source `{other}`")),
        }
    }
}

impl ForwardCache {
    pub fn confidences(&self, source: ScoreSource) -> &Array2<f64> {
        match source {
            ScoreSource::Refined => &self.refined_probs,
            ScoreSource::Raw => &self.probs,
        }
    }
}

/// Per-sample thresholded decisions: label `c` is positive iff its
/// confidence is `>= thresholds[c]`. With `ontology` given, decisions are
/// expanded to include all ancestors.
pub fn decide(confidences: ArrayView2<'_, f64>, thresholds: &[f64], ontology: Option<&LabelOntology>) -> Vec<LabelSet> {
    let c = confidences.ncols();
    confidences
        .rows()
        .into_iter()
        .map(|row| {
            let raw = LabelSet::from_ids(
                c,
                row.iter().zip(thresholds).enumerate().filter(|(_, (p, t))| p >= t).map(|(i, _)| i),
            );
            match ontology {
                Some(o) => o.expand(&raw),
                None => raw,
            }
        })
        .collect()
}

/// Runs the model and thresholds its confidences.
pub fn predict(
    params: &ModelParams,
    features: ArrayView2<'_, f64>,
    thresholds: &[f64],
    source: ScoreSource,
    ontology: Option<&LabelOntology>,
) -> Result<(Array2<f64>, Vec<LabelSet>), ModelError> {
    if thresholds.len() != params.num_labels() {
        return Err(ModelError::DimMismatch(format!(
            "{} thresholds for {} labels",
            thresholds.len(),
            params.num_labels()
        )));
    }
    let cache = forward(params, features)?;
    let conf = cache.confidences(source).clone();
    let decisions = decide(conf.view(), thresholds, ontology);
    Ok((conf, decisions))
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &str = "ontolabel-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Original label id → model label id, from vocabulary filtering.
    pub label_remap: Vec<Option<usize>>,
    /// Calibrated per-label thresholds, if calibration has run.
    pub thresholds: Option<Vec<f64>>,
    pub score_source: ScoreSource,
    /// Whether decisions are expanded with ancestors at inference.
    pub expand_decisions: bool,
}

fn write_matrix(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "tensor {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

impl Checkpoint {
    /// Text container: a header, dimensions, options, then each tensor as
    /// `tensor <name> <rows> <cols>` followed by row-major rows. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        let _ = writeln!(out, "dims {} {} {} {}", p.input_dim(), p.hidden_dim(), p.num_labels(), p.embed_dim());
        let _ = writeln!(out, "score_source {}", self.score_source.as_str());
        let _ = writeln!(out, "expand_decisions {}", self.expand_decisions);
        let remap: Vec<String> =
            self.label_remap.iter().map(|r| r.map_or_else(|| "-".to_string(), |v| v.to_string())).collect();
        let _ = writeln!(out, "remap {} {}", remap.len(), remap.join(" "));
        match &self.thresholds {
            Some(t) => {
                let vals: Vec<String> = t.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "thresholds {}", vals.join(" "));
            }
            None => out.push_str("thresholds none\n"),
        }
        let [w1, b1, ws, bs, spl, we, be] = p.tensors();
        let (d, h, c, e) = (p.input_dim(), p.hidden_dim(), p.num_labels(), p.embed_dim());
        write_matrix(&mut out, "w1", d, h, w1);
        write_matrix(&mut out, "b1", 1, h, b1);
        write_matrix(&mut out, "ws", h, c, ws);
        write_matrix(&mut out, "bs", 1, c, bs);
        write_matrix(&mut out, "spl", c, c, spl);
        write_matrix(&mut out, "we", h, e, we);
        write_matrix(&mut out, "be", 1, e, be);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| ModelError::Checkpoint {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };
        let bad = |line: usize, message: String| ModelError::Checkpoint { line, message };
        let parse_f64 = |line: usize, t: &str| -> Result<f64, ModelError> {
            let v: f64 = t.parse().map_err(|_| bad(line, format!("bad number `{t}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(line, format!("non-finite number `{t}`")))
            }
        };

        let (ln, header) = next("header")?;
        let mut hf = header.split_whitespace();
        if hf.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(ln, "not a checkpoint file".into()));
        }
        let version: u32 = hf.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(ln, "missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(ln, format!("unsupported version {version}")));
        }

        let (ln, dims_line) = next("dims")?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| bad(ln, "expected `dims`".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(ln, format!("bad dimension `{t}`"))))
            .collect::<Result<_, _>>()?;
        let [d, h, c, e] = dims[..] else {
            return Err(bad(ln, "expected 4 dimensions".into()));
        };
        // Bound total size so a corrupt header cannot request huge allocations.
        let total = d
            .checked_mul(h)
            .and_then(|x| x.checked_add(h.checked_mul(c)?))
            .and_then(|x| x.checked_add(c.checked_mul(c)?))
            .and_then(|x| x.checked_add(h.checked_mul(e)?));
        if total.is_none_or(|t| t > text.len()) {
            return Err(bad(ln, "dimensions inconsistent with file size".into()));
        }

        let (ln, src_line) = next("score_source")?;
        let score_source: ScoreSource = src_line
            .strip_prefix("score_source ")
            .ok_or_else(|| bad(ln, "expected `score_source`".into()))?
            .parse()
            .map_err(|m| bad(ln, m))?;
        let (ln, exp_line) = next("expand_decisions")?;
        let expand_decisions = match exp_line.strip_prefix("expand_decisions ") {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(bad(ln, "expected `expand_decisions true|false`".into())),
        };

        let (ln, remap_line) = next("remap")?;
        let mut rf =
            remap_line.strip_prefix("remap ").ok_or_else(|| bad(ln, "expected `remap`".into()))?.split_whitespace();
        let n: usize = rf.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(ln, "missing remap length".into()))?;
        let label_remap: Vec<Option<usize>> = rf
            .map(|t| {
                if t == "-" {
                    Ok(None)
                } else {
                    let v: usize = t.parse().map_err(|_| bad(ln, format!("bad remap entry `{t}`")))?;
                    if v < c {
                        Ok(Some(v))
                    } else {
                        Err(bad(ln, format!("remap entry {v} out of range")))
                    }
                }
            })
            .collect::<Result<_, _>>()?;
        if label_remap.len() != n {
            return Err(bad(ln, format!("remap declares {n} entries, found {}", label_remap.len())));
        }

        let (ln, thr_line) = next("thresholds")?;
        let thr_body = thr_line.strip_prefix("thresholds ").ok_or_else(|| bad(ln, "expected `thresholds`".into()))?;
        let thresholds = if thr_body == "none" {
            None
        } else {
            let t: Vec<f64> = thr_body.split_whitespace().map(|t| parse_f64(ln, t)).collect::<Result<_, _>>()?;
            if t.len() != c {
                return Err(bad(ln, format!("{} thresholds for {c} labels", t.len())));
            }
            Some(t)
        };

        let mut read_tensor = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>, ModelError> {
            let (ln, head) = next(name)?;
            let expected = format!("tensor {name} {rows} {cols}");
            if head != expected {
                return Err(bad(ln, format!("expected `{expected}`")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = next(name)?;
                let before = data.len();
                for t in row.split_whitespace() {
                    data.push(parse_f64(ln, t)?);
                }
                if data.len() - before != cols {
                    return Err(bad(
                        ln,
                        format!("row of `{name}` has {} values, expected {cols}", data.len() - before),
                    ));
                }
            }
            Ok(data)
        };
        let mat =
            |rows: usize, cols: usize, v: Vec<f64>| Array2::from_shape_vec((rows, cols), v).expect("checked length");
        let w1 = mat(d, h, read_tensor("w1", d, h)?);
        let b1 = Array1::from(read_tensor("b1", 1, h)?);
        let ws = mat(h, c, read_tensor("ws", h, c)?);
        let bs = Array1::from(read_tensor("bs", 1, c)?);
        let spl = mat(c, c, read_tensor("spl", c, c)?);
        let we = mat(h, e, read_tensor("we", h, e)?);
        let be = Array1::from(read_tensor("be", 1, e)?);
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(bad(ln, "expected `end`".into()));
        }
        Ok(Self {
            params: ModelParams { w1, b1, ws, bs, spl, we, be },
            label_remap,
            thresholds,
            score_source,
            expand_decisions,
        })
    }
}
