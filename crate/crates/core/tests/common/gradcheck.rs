//! Finite-difference checking of the combined loss on a small fixed instance.

use ndarray::Array2;
use ontolabel::losses::{self, ClassWeights, LossConfig, LossInputs, RhemDraws, TripletBatch};
use ontolabel::model::{self, ModelConfig, ModelParams};
use ontolabel::LabelSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const B: usize = 16;
pub const C: usize = 12;
pub const D: usize = 8;

pub struct Instance {
    pub params: ModelParams,
    pub x: Array2<f64>,
    pub labels: Vec<LabelSet>,
    pub y: Array2<f64>,
    pub weights: ClassWeights,
    pub draws: RhemDraws,
    pub triplets: TripletBatch,
}

pub fn instance(config: &LossConfig, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new(D, C, ModelConfig { hidden: 24, embed: 16 }, seed);
    // Move away from the identity and zero-bias starting point.
    params.spl.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
    params.b1.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    params.bs.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    params.be.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    let x = Array2::from_shape_fn((B, D), |_| rng.random_range(-1.5..1.5));
    // A few shared patterns so that similar pairs exist at theta = 1.
    let patterns: [&[usize]; 5] = [&[0, 1], &[0, 1, 2], &[3], &[4, 5, 6], &[7, 8, 9, 10]];
    let labels: Vec<LabelSet> = (0..B)
        .map(|_| {
            let mut s = LabelSet::from_ids(C, patterns[rng.random_range(0..patterns.len())].iter().copied());
            if rng.random_bool(0.3) {
                s.insert(11);
            }
            s
        })
        .collect();
    let y = losses::dense_targets(&labels, C);
    let counts: Vec<(usize, usize)> = (0..C)
        .map(|c| {
            let p = labels.iter().filter(|s| s.contains(c)).count();
            (p, B - p)
        })
        .collect();
    let weights = ClassWeights::from_counts(&counts, config.beta_clamp);
    let cache = model::forward(&params, x.view()).unwrap();
    let mask = vec![LabelSet::full(C); B];
    let inputs = LossInputs { cache: &cache, targets: y.view(), weights: &weights };
    let (_, _, draws, triplets) = losses::combined_loss(inputs, &labels, &mask, config, &mut rng).unwrap();
    Instance { params, x, labels, y, weights, draws, triplets }
}

pub fn total_loss(inst: &Instance, params: &ModelParams, config: &LossConfig) -> f64 {
    let cache = model::forward(params, inst.x.view()).unwrap();
    let inputs = LossInputs { cache: &cache, targets: inst.y.view(), weights: &inst.weights };
    losses::combined_loss_with_samples(inputs, &inst.draws, &inst.triplets, config).unwrap().0.total
}

/// Checks that no rectifier input or triplet hinge sits within `margin` of
/// its kink, where finite differences are meaningless.
pub fn assert_smooth(inst: &Instance, config: &LossConfig, margin: f64) {
    let mut pre = inst.x.dot(&inst.params.w1);
    pre += &inst.params.b1;
    let closest = pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    assert!(closest > margin, "rectifier input {closest} too close to 0");
    if config.triplet {
        let e = model::forward(&inst.params, inst.x.view()).unwrap().embedding;
        let dist = |i: usize, j: usize| (&e.row(i) - &e.row(j)).mapv(|v| v * v).sum().sqrt();
        for t in &inst.triplets.triplets {
            let h = dist(t.anchor, t.similar) - dist(t.anchor, t.dissimilar) + config.mu;
            assert!(h.abs() > margin, "triplet hinge {h} too close to 0");
        }
    }
}

pub fn max_relative_error(inst: &Instance, config: &LossConfig) -> (f64, String) {
    let cache = model::forward(&inst.params, inst.x.view()).unwrap();
    let inputs = LossInputs { cache: &cache, targets: inst.y.view(), weights: &inst.weights };
    let (_, out) = losses::combined_loss_with_samples(inputs, &inst.draws, &inst.triplets, config).unwrap();
    let analytic = model::backward(&inst.params, &cache, &out);
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let mut probe = inst.params.clone();
    for t in 0..ModelParams::TENSOR_NAMES.len() {
        let n = probe.tensors()[t].len();
        for k in 0..n {
            let orig = probe.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + h;
            let up = total_loss(inst, &probe, config);
            probe.tensors_mut()[t][k] = orig - h;
            let down = total_loss(inst, &probe, config);
            probe.tensors_mut()[t][k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic.tensors()[t][k];
            let rel = (numeric - exact).abs() / (numeric.abs() + exact.abs()).max(1e-7);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}] numeric={numeric:e} analytic={exact:e}", ModelParams::TENSOR_NAMES[t]));
            }
        }
    }
    worst
}
