//! Direct-definition oracles for the metrics and samplers.

use std::collections::BTreeSet;

use ontolabel::eval::f1_from_counts;
use ontolabel::losses::similarity;
use ontolabel::LabelSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut credit = 0.0;
    let mut pairs = 0u64;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

pub fn f1_at(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let coarse = rng.random_bool(0.5);
    let p = rng.random_range(0.05..0.95);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
    let scores = labels
        .iter()
        .map(|&y| {
            let v: f64 = rng.random_range(0.0..1.0) + if y { 0.2 } else { 0.0 };
            let v = v.min(1.0);
            // Coarse scores produce many ties.
            if coarse {
                (v * 20.0).round() / 20.0
            } else {
                v
            }
        })
        .collect();
    (scores, labels)
}

/// Every `(a, b, c)` the sampler may return.
pub fn valid_triplets(labels: &[LabelSet], theta: f64) -> BTreeSet<(usize, usize, usize)> {
    let n = labels.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        if labels[a].is_empty() {
            continue;
        }
        for b in 0..n {
            let sab = similarity(&labels[a], &labels[b]);
            if b == a || sab < theta {
                continue;
            }
            for c in 0..n {
                if c != a && similarity(&labels[a], &labels[c]) < sab {
                    out.insert((a, b, c));
                }
            }
        }
    }
    out
}
