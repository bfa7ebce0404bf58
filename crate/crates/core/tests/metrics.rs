//! Metric functions against direct-definition oracles.

mod common;

use common::oracles::{auc_oracle, f1_at, random_instance};
use ndarray::Array2;
use ontolabel::eval::{acg, auc, calibrate_label, f1_from_counts, prf1, retrieve};
use ontolabel::LabelSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let (s, y) = random_instance(&mut rng, 1000);
        match (auc(&s, &y), auc_oracle(&s, &y)) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn calibration_is_never_beaten_by_a_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..60 {
        let (s, y) = random_instance(&mut rng, 300);
        let k = calibrate_label(&s, &y);
        if !y.contains(&true) {
            assert!(k.no_positives);
            continue;
        }
        assert_eq!(k.f1, f1_at(&s, &y, k.threshold));
        for g in 0..=10_000 {
            let t = g as f64 * 1e-4;
            assert!(f1_at(&s, &y, t) <= k.f1, "grid threshold {t} beats {}", k.threshold);
        }
    }
}

#[test]
fn calibration_picks_the_lowest_of_tied_thresholds() {
    // Everything positive and only the top score positive both give F1 = 2/3.
    let s = [0.1, 0.3, 0.5, 0.7];
    let y = [true, false, false, true];
    let k = calibrate_label(&s, &y);
    let best = (0..=10_000).map(|g| f1_at(&s, &y, g as f64 * 1e-4)).fold(0.0, f64::max);
    assert_eq!(k.f1, best);
    assert_eq!(k.f1, 2.0 / 3.0);
    assert_eq!(k.threshold, 0.0);
}

#[test]
fn identical_scores_pick_the_better_constant_decision() {
    for y in [vec![true, false, false, false], vec![true, true, true, false], vec![true, true]] {
        let s = vec![0.42; y.len()];
        let k = calibrate_label(&s, &y);
        let p = y.iter().filter(|&&v| v).count();
        let all_pos = f1_from_counts(p, y.len() - p, 0);
        let all_neg = f1_from_counts(0, 0, p);
        assert_eq!(k.f1, all_pos.max(all_neg));
    }
}

#[test]
fn prf_matches_scalar_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let c = 7;
    let sets = |rng: &mut ChaCha8Rng| -> Vec<LabelSet> {
        (0..40).map(|_| LabelSet::from_ids(c, (0..c).filter(|_| rng.random_bool(0.3)))).collect()
    };
    let decided = sets(&mut rng);
    let truth = sets(&mut rng);
    let got = prf1(&decided, &truth, c);
    for (l, got) in got.iter().enumerate() {
        let tp = (0..40).filter(|&i| decided[i].contains(l) && truth[i].contains(l)).count();
        let fp = (0..40).filter(|&i| decided[i].contains(l) && !truth[i].contains(l)).count();
        let fn_ = (0..40).filter(|&i| !decided[i].contains(l) && truth[i].contains(l)).count();
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        assert_eq!((got.tp, got.fp, got.fn_), (tp, fp, fn_));
        assert!((got.precision - p).abs() < 1e-15);
        assert!((got.recall - r).abs() < 1e-15);
        assert!((got.f1 - f).abs() < 1e-15);
    }
}

#[test]
fn acg_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let c = 9;
        let q = LabelSet::from_ids(c, (0..c).filter(|_| rng.random_bool(0.4)));
        let k = rng.random_range(1..8);
        let r: Vec<LabelSet> = (0..k).map(|_| LabelSet::from_ids(c, (0..c).filter(|_| rng.random_bool(0.4)))).collect();
        let shared: usize = r.iter().map(|x| (0..c).filter(|&l| q.contains(l) && x.contains(l)).count()).sum();
        assert_eq!(acg(&q, &r), shared as f64 / k as f64);
    }
}

#[test]
fn retrieval_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let n = 200;
    let e = 6;
    let gallery = Array2::from_shape_fn((n, e), |_| rng.random_range(-1.0..1.0));
    let patients: Vec<String> = (0..n).map(|_| format!("p{}", rng.random_range(0..60))).collect();
    let refs: Vec<&str> = patients.iter().map(String::as_str).collect();
    for q in 0..n {
        let k = rng.random_range(1..12);
        let query = gallery.row(q).to_vec();
        let got = retrieve(&query, refs[q], gallery.view(), &refs, k);
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&g| patients[g] != patients[q])
            .map(|g| {
                let d: f64 = (0..e).map(|j| (gallery[[g, j]] - query[j]).powi(2)).sum();
                (d.sqrt(), g)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = all.iter().take(k).map(|x| x.1).collect();
        assert_eq!(got.ranked, want);
        assert_eq!(got.short, all.len() < k);
        assert!(got.ranked.iter().all(|&g| patients[g] != patients[q]));
    }
}
