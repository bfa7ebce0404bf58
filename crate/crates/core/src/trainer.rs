//! Minibatch SGD over the combined loss.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tracing::{debug, info};

use crate::dataset::{Dataset, Split};
use crate::labelset::LabelSet;
use crate::losses::{self, ClassWeights, LossBreakdown, LossConfig, LossError, LossInputs};
use crate::model::{self, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// `(epochs, learning rate)` phases run in order.
    pub lr_schedule: Vec<(usize, f64)>,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Add ancestors of mined labels before training (and at inference).
    pub expand_labels: bool,
    /// Drop labels text mining classified irrelevant.
    pub relevance_filter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr_schedule: vec![(10, 0.01), (5, 0.001)],
            momentum: 0.0,
            seed: 0,
            loss: LossConfig::default(),
            expand_labels: true,
            relevance_filter: true,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.lr_schedule.iter().map(|&(e, _)| e).sum()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.lr_schedule.is_empty() {
            return Err(TrainError::Config("empty learning-rate schedule".into()));
        }
        for &(epochs, rate) in &self.lr_schedule {
            if epochs == 0 {
                return Err(TrainError::Config("every schedule phase needs >= 1 epoch".into()));
            }
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(TrainError::Config(format!("learning rate {rate} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        self.loss.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("model dimensions ({model_dim} features, {model_labels} labels) do not match the dataset ({data_dim}, {data_labels})")]
    Dimensions { model_dim: usize, model_labels: usize, data_dim: usize, data_labels: usize },
    #[error("no training sample has a positive label")]
    NoTrainingSamples,
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean per-batch loss terms over one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub batches: usize,
    pub mean: LossBreakdown,
    /// Batches whose RHEM support was empty.
    pub empty_rhem_batches: usize,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} lr={} batches={} wce={:.6} rhem={:.6} spl={:.6} triplet={:.6} total={:.6} empty_rhem={} wall_s={:.3}",
            self.epoch,
            self.learning_rate,
            self.batches,
            self.mean.wce,
            self.mean.rhem,
            self.mean.spl,
            self.mean.triplet,
            self.mean.total,
            self.empty_rhem_batches,
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Labels whose class weights fell back to 1.
    pub degenerate_labels: Vec<usize>,
}

/// Labels a sample is trained on.
pub fn training_labels(ds: &Dataset, idx: usize, config: &TrainConfig) -> LabelSet {
    let s = &ds.samples()[idx];
    let mut base = s.mined_labels.clone();
    if !config.relevance_filter {
        base.union_with(&s.irrelevant_labels);
    }
    if config.expand_labels {
        ds.ontology().expand(&base)
    } else {
        base
    }
}

/// Training-split samples with at least one training label.
pub fn trainable_indices(ds: &Dataset, config: &TrainConfig) -> Vec<usize> {
    ds.split_indices(Split::Train).into_iter().filter(|&i| !training_labels(ds, i, config).is_empty()).collect()
}

/// Positive sets, reliable negatives and the RHEM mask for one batch.
pub struct BatchLabels {
    pub positives: Vec<LabelSet>,
    pub reliable_negatives: Vec<LabelSet>,
    pub mask: Vec<LabelSet>,
}

pub fn batch_labels(ds: &Dataset, batch: &[usize], config: &TrainConfig) -> BatchLabels {
    let positives: Vec<LabelSet> = batch.iter().map(|&i| training_labels(ds, i, config)).collect();
    let reliable_negatives: Vec<LabelSet> = positives.iter().map(|p| ds.ontology().reliable_negatives(p)).collect();
    let mask = losses::rhem_mask(&positives, &reliable_negatives, &config.loss);
    BatchLabels { positives, reliable_negatives, mask }
}

fn gather_features(ds: &Dataset, batch: &[usize]) -> Array2<f64> {
    let d = ds.dim();
    let mut x = Array2::zeros((batch.len(), d));
    for (r, &i) in batch.iter().enumerate() {
        for (k, &v) in ds.samples()[i].features.iter().enumerate() {
            x[[r, k]] = v;
        }
    }
    x
}

/// Trains `params` on the training split. Deterministic for a given seed.
pub fn train(ds: &Dataset, mut params: ModelParams, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if params.input_dim() != ds.dim() || params.num_labels() != ds.num_labels() {
        return Err(TrainError::Dimensions {
            model_dim: params.input_dim(),
            model_labels: params.num_labels(),
            data_dim: ds.dim(),
            data_labels: ds.num_labels(),
        });
    }
    let mut order = trainable_indices(ds, config);
    if order.is_empty() {
        return Err(TrainError::NoTrainingSamples);
    }
    let c = ds.num_labels();
    let n = order.len();
    let mut pos_counts = vec![0usize; c];
    for &i in &order {
        for l in training_labels(ds, i, config).iter() {
            pos_counts[l] += 1;
        }
    }
    let counts: Vec<(usize, usize)> = pos_counts.iter().map(|&p| (p, n - p)).collect();
    let weights = ClassWeights::from_counts(&counts, config.loss.beta_clamp);
    if !weights.degenerate.is_empty() {
        debug!(labels = ?weights.degenerate, "labels with degenerate class counts use unit weights");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = ModelParams::zeros_like(&params);
    let mut log = Vec::with_capacity(config.total_epochs());
    let mut epoch = 0;
    for &(epochs, lr) in &config.lr_schedule {
        for _ in 0..epochs {
            epoch += 1;
            let started = Instant::now();
            order.shuffle(&mut rng);
            let mut sum = LossBreakdown::default();
            let mut batches = 0;
            let mut empty_rhem = 0;
            for (b, batch) in order.chunks(config.batch_size).enumerate() {
                let labels = batch_labels(ds, batch, config);
                let x = gather_features(ds, batch);
                let cache = model::forward(&params, x.view())?;
                let y = losses::dense_targets(&labels.positives, c);
                let inputs = LossInputs { cache: &cache, targets: y.view(), weights: &weights };
                let (breakdown, out_grads, draws, _) =
                    losses::combined_loss(inputs, &labels.positives, &labels.mask, &config.loss, &mut rng)?;
                if !breakdown.is_finite() {
                    return Err(TrainError::NonFinite { epoch, batch: b });
                }
                if config.loss.rhem && draws.empty_support {
                    empty_rhem += 1;
                }
                let grads = model::backward(&params, &cache, &out_grads);
                if !grads.is_finite() {
                    return Err(TrainError::NonFinite { epoch, batch: b });
                }
                if config.momentum > 0.0 {
                    velocity.scale(config.momentum);
                    velocity.add_scaled(&grads, 1.0);
                    params.add_scaled(&velocity, -lr);
                } else {
                    params.add_scaled(&grads, -lr);
                }
                sum.wce += breakdown.wce;
                sum.rhem += breakdown.rhem;
                sum.spl += breakdown.spl;
                sum.triplet += breakdown.triplet;
                sum.total += breakdown.total;
                batches += 1;
            }
            let k = batches as f64;
            let entry = EpochLog {
                epoch,
                learning_rate: lr,
                batches,
                mean: LossBreakdown {
                    wce: sum.wce / k,
                    rhem: sum.rhem / k,
                    spl: sum.spl / k,
                    triplet: sum.triplet / k,
                    total: sum.total / k,
                },
                empty_rhem_batches: empty_rhem,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            info!("{}", entry.to_line());
            log.push(entry);
        }
    }
    Ok(TrainOutcome { params, log, degenerate_labels: weights.degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, CorruptionConfig, GeneratorConfig, Sample};
    use crate::model::ModelConfig;
    use crate::ontology::{Category, LabelOntology, OntologySpec};
    use std::sync::Arc;

    fn ontology() -> Arc<LabelOntology> {
        let mut s = OntologySpec::default();
        let chest = s.add_label("chest", Category::BodyPart, &[]);
        let lung = s.add_label("lung", Category::BodyPart, &[]);
        let ll = s.add_label("left lung", Category::BodyPart, &[]);
        let rl = s.add_label("right lung", Category::BodyPart, &[]);
        let abd = s.add_label("abdomen", Category::BodyPart, &[]);
        let liver = s.add_label("liver", Category::BodyPart, &[]);
        s.add_label("nodule", Category::Type, &[]);
        s.add_parent(lung, chest);
        s.add_parent(ll, lung);
        s.add_parent(rl, lung);
        s.add_parent(liver, abd);
        s.add_exclusive(ll, rl);
        s.add_exclusive(chest, abd);
        Arc::new(LabelOntology::new(s).unwrap())
    }

    fn data() -> Dataset {
        let cfg = GeneratorConfig {
            n_patients: 40,
            lesions_per_patient: 3,
            dim: 8,
            corruption: CorruptionConfig { p_drop_parent: 0.4, p_drop: 0.0, p_inject: 0.1 },
            ..GeneratorConfig::default()
        };
        generate_synthetic(ontology(), &cfg, 1).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            lr_schedule: vec![(2, 0.05), (1, 0.005)],
            seed: 5,
            loss: LossConfig { rhem_samples: 200, triplets: 50, ..LossConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let ds = data();
        let p = ModelParams::new(8, ds.num_labels(), ModelConfig { hidden: 8, embed: 4 }, 2);
        let cfg = TrainConfig { lr_schedule: vec![(2, 0.0)], ..small_config() };
        let out = train(&ds, p.clone(), &cfg).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = data();
        let p = ModelParams::new(8, ds.num_labels(), ModelConfig { hidden: 8, embed: 4 }, 2);
        let a = train(&ds, p.clone(), &small_config()).unwrap();
        let b = train(&ds, p, &small_config()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 3);
        let strip = |l: &EpochLog| (l.epoch, l.mean);
        assert_eq!(a.log.iter().map(strip).collect::<Vec<_>>(), b.log.iter().map(strip).collect::<Vec<_>>());
    }

    #[test]
    fn empty_samples_never_trained_and_masks_cover_labels() {
        let ds = data();
        let cfg = small_config();
        let idx = trainable_indices(&ds, &cfg);
        assert!(idx.iter().all(|&i| !training_labels(&ds, i, &cfg).is_empty()));
        assert!(idx.iter().all(|&i| ds.samples()[i].split == Split::Train));
        let bl = batch_labels(&ds, &idx[..10], &cfg);
        for k in 0..10 {
            assert!(bl.positives[k].is_subset(&bl.mask[k]));
            assert!(bl.reliable_negatives[k].is_subset(&bl.mask[k]));
            let unknown =
                LabelSet::full(ds.num_labels()).difference(&bl.positives[k]).difference(&bl.reliable_negatives[k]);
            assert!(unknown.is_disjoint(&bl.mask[k]));
        }
    }

    #[test]
    fn one_step_reduces_wce_on_separable_toy() {
        // 2 labels, 8 samples: label 0 iff x0 > 0, label 1 iff x1 > 0.
        let mut s = OntologySpec::default();
        s.add_label("a", Category::Type, &[]);
        s.add_label("b", Category::Type, &[]);
        let o = Arc::new(LabelOntology::new(s).unwrap());
        let pts = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (2.0, 0.5), (0.5, 2.0), (1.5, -0.5), (-0.5, 1.5), (1.0, 1.0)];
        let samples = pts
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let labels =
                    LabelSet::from_ids(2, [(a > 0.0).then_some(0), (b > 0.0).then_some(1)].into_iter().flatten());
                Sample {
                    lesion_id: format!("s{i}"),
                    patient_id: format!("p{i}"),
                    split: Split::Train,
                    features: vec![a, b],
                    mined_labels: labels,
                    expanded_labels: LabelSet::empty(2),
                    irrelevant_labels: LabelSet::empty(2),
                    clean_labels: None,
                }
            })
            .collect();
        let ds = Dataset::new(o, 2, samples).unwrap();
        let p0 = ModelParams::new(2, 2, ModelConfig { hidden: 6, embed: 2 }, 4);
        let cfg = TrainConfig {
            batch_size: 8,
            lr_schedule: vec![(1, 0.5)],
            loss: LossConfig::wce_only(),
            ..TrainConfig::default()
        };
        let eval = |p: &ModelParams| {
            let idx = trainable_indices(&ds, &cfg);
            let bl = batch_labels(&ds, &idx, &cfg);
            let cache = model::forward(p, gather_features(&ds, &idx).view()).unwrap();
            let y = losses::dense_targets(&bl.positives, 2);
            let counts: Vec<(usize, usize)> = (0..2)
                .map(|c| {
                    let pc = bl.positives.iter().filter(|s| s.contains(c)).count();
                    (pc, idx.len() - pc)
                })
                .collect();
            let w = ClassWeights::from_counts(&counts, 300.0);
            losses::weighted_ce(cache.probs.view(), y.view(), &w).unwrap().loss
        };
        let before = eval(&p0);
        let out = train(&ds, p0, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!((out.log[0].mean.wce - before).abs() < 1e-12);
        assert!(eval(&out.params) < before);
    }

    #[test]
    fn bad_config_rejected() {
        let ds = data();
        let p = ModelParams::new(8, ds.num_labels(), ModelConfig { hidden: 8, embed: 4 }, 2);
        let cfg = TrainConfig { lr_schedule: vec![(0, 0.1)], ..small_config() };
        assert!(matches!(train(&ds, p.clone(), &cfg), Err(TrainError::Config(_))));
        let wrong = ModelParams::new(3, ds.num_labels(), ModelConfig { hidden: 8, embed: 4 }, 2);
        assert!(matches!(train(&ds, wrong, &small_config()), Err(TrainError::Dimensions { .. })));
    }
}
