//! Central finite differences against the hand-written backward pass.

mod common;

use common::gradcheck::{assert_smooth, instance, max_relative_error};
use ontolabel::losses::LossConfig;

#[test]
fn combined_loss_gradients_match_finite_differences() {
    let config = LossConfig::default();
    let inst = instance(&config, 11);
    assert!(inst.draws.total == config.rhem_samples);
    assert!(!inst.triplets.triplets.is_empty());
    assert!(inst.labels.iter().all(|s| !s.is_empty()));
    assert_smooth(&inst, &config, 1e-4);
    let (err, at) = max_relative_error(&inst, &config);
    assert!(err < 1e-4, "max relative error {err} at {at}");
}

#[test]
fn rhem_on_refined_scores_gradients_match() {
    let config = LossConfig { rhem_on_refined: true, ..LossConfig::default() };
    let inst = instance(&config, 12);
    assert_smooth(&inst, &config, 1e-4);
    let (err, at) = max_relative_error(&inst, &config);
    assert!(err < 1e-4, "max relative error {err} at {at}");
}

#[test]
fn single_terms_gradients_match() {
    let off = LossConfig { wce: false, rhem: false, spl: false, triplet: false, ..LossConfig::default() };
    for config in [
        LossConfig { wce: true, ..off.clone() },
        LossConfig { rhem: true, ..off.clone() },
        LossConfig { spl: true, ..off.clone() },
        LossConfig { triplet: true, ..off.clone() },
    ] {
        let inst = instance(&config, 13);
        assert_smooth(&inst, &config, 1e-4);
        let (err, at) = max_relative_error(&inst, &config);
        assert!(err < 1e-4, "max relative error {err} at {at} for {config:?}");
    }
}
