//! Run configuration: one TOML file per run, overridable from the command
//! line, echoed into every output directory.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use ontolabel::dataset::{CorruptionConfig, GeneratorConfig, LabelView, SplitRatios};
use ontolabel::eval::EvalOptions;
use ontolabel::losses::LossConfig;
use ontolabel::model::{ModelConfig, ScoreSource};
use ontolabel::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub generator: GeneratorSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ontology: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Mined label rows joined onto the dataset before training.
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub n_patients: usize,
    pub lesions_per_patient: usize,
    pub dim: usize,
    pub p_drop_parent: f64,
    pub p_drop: f64,
    pub p_inject: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub max_leaves: usize,
    pub zipf_exponent: f64,
    pub prototype_scale: f64,
    pub noise_std: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            n_patients: g.n_patients,
            lesions_per_patient: g.lesions_per_patient,
            dim: g.dim,
            p_drop_parent: g.corruption.p_drop_parent,
            p_drop: g.corruption.p_drop,
            p_inject: g.corruption.p_inject,
            train_ratio: g.split_ratios.train,
            val_ratio: g.split_ratios.val,
            test_ratio: g.split_ratios.test,
            max_leaves: g.max_leaves,
            zipf_exponent: g.zipf_exponent,
            prototype_scale: g.prototype_scale,
            noise_std: g.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    /// `[[epochs, learning_rate], ...]`
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub hidden: usize,
    pub embed: usize,
    pub expand: bool,
    pub relevance_filter: bool,
    /// Minimum label occurrences per split; labels below are dropped.
    pub min_train: usize,
    pub min_val: usize,
    pub min_test: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        Self {
            batch_size: t.batch_size,
            lr_schedule: t.lr_schedule,
            momentum: t.momentum,
            hidden: m.hidden,
            embed: m.embed,
            expand: t.expand_labels,
            relevance_filter: t.relevance_filter,
            min_train: 0,
            min_val: 0,
            min_test: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub beta_clamp: f64,
    pub gamma: f64,
    pub rhem_samples: usize,
    pub theta: f64,
    pub mu: f64,
    pub triplets: usize,
    pub triplet_retries: usize,
    pub lambda: f64,
    pub wce: bool,
    pub rhem: bool,
    pub spl: bool,
    pub triplet: bool,
    pub rhem_all_labels: bool,
    pub rhem_on_refined: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            beta_clamp: l.beta_clamp,
            gamma: l.gamma,
            rhem_samples: l.rhem_samples,
            theta: l.theta,
            mu: l.mu,
            triplets: l.triplets,
            triplet_retries: l.triplet_retries,
            lambda: l.lambda,
            wce: l.wce,
            rhem: l.rhem,
            spl: l.spl,
            triplet: l.triplet,
            rhem_all_labels: l.rhem_all_labels,
            rhem_on_refined: l.rhem_on_refined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `refined` or `raw`; raw is the natural choice without score propagation.
    pub score_source: Option<String>,
    /// `clean`, `expanded` or `mined`.
    pub truth: String,
    pub retrieval_k: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { score_source: None, truth: "clean".into(), retrieval_k: Some(5) }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid run configuration")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration always serializes")
    }

    /// Range checks that serde cannot express.
    pub fn check(&self) -> Result<()> {
        self.loss_config().validate()?;
        self.train_config().validate()?;
        let g = &self.generator;
        for (name, v) in [("p_drop_parent", g.p_drop_parent), ("p_drop", g.p_drop), ("p_inject", g.p_inject)] {
            if !(0.0..=1.0).contains(&v) {
                bail!("generator.{name} = {v} is outside [0, 1]");
            }
        }
        for (name, v) in [("train_ratio", g.train_ratio), ("val_ratio", g.val_ratio), ("test_ratio", g.test_ratio)] {
            if !(v.is_finite() && v >= 0.0) {
                bail!("generator.{name} must be finite and >= 0");
            }
        }
        if g.train_ratio + g.val_ratio + g.test_ratio <= 0.0 {
            bail!("generator split ratios sum to 0");
        }
        if self.train.hidden == 0 || self.train.embed == 0 {
            bail!("train.hidden and train.embed must be >= 1");
        }
        self.score_source()?;
        self.truth_view()?;
        if self.eval.retrieval_k == Some(0) {
            bail!("eval.retrieval_k must be >= 1");
        }
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            n_patients: g.n_patients,
            lesions_per_patient: g.lesions_per_patient,
            dim: g.dim,
            corruption: CorruptionConfig { p_drop_parent: g.p_drop_parent, p_drop: g.p_drop, p_inject: g.p_inject },
            split_ratios: SplitRatios { train: g.train_ratio, val: g.val_ratio, test: g.test_ratio },
            max_leaves: g.max_leaves,
            zipf_exponent: g.zipf_exponent,
            prototype_scale: g.prototype_scale,
            noise_std: g.noise_std,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        let l = &self.loss;
        LossConfig {
            beta_clamp: l.beta_clamp,
            gamma: l.gamma,
            rhem_samples: l.rhem_samples,
            theta: l.theta,
            mu: l.mu,
            triplets: l.triplets,
            triplet_retries: l.triplet_retries,
            lambda: l.lambda,
            wce: l.wce,
            rhem: l.rhem,
            spl: l.spl,
            triplet: l.triplet,
            rhem_all_labels: l.rhem_all_labels,
            rhem_on_refined: l.rhem_on_refined,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            lr_schedule: self.train.lr_schedule.clone(),
            momentum: self.train.momentum,
            seed: self.seed,
            loss: self.loss_config(),
            expand_labels: self.train.expand,
            relevance_filter: self.train.relevance_filter,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { hidden: self.train.hidden, embed: self.train.embed }
    }

    /// Refined scores unless configured otherwise or score propagation is
    /// off.
    pub fn score_source(&self) -> Result<ScoreSource> {
        match &self.eval.score_source {
            Some(s) => s.parse().map_err(anyhow::Error::msg),
            None if self.loss.spl => Ok(ScoreSource::Refined),
            None => Ok(ScoreSource::Raw),
        }
    }

    pub fn truth_view(&self) -> Result<LabelView> {
        match self.eval.truth.as_str() {
            "clean" => Ok(LabelView::Clean),
            "expanded" => Ok(LabelView::Expanded),
            "mined" => Ok(LabelView::Mined),
            other => bail!("eval.truth must be clean, expanded or mined, got `{other}`"),
        }
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            score_source: self.score_source()?,
            expand_decisions: self.train.expand,
            truth: self.truth_view()?,
            retrieval_k: self.eval.retrieval_k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.loss_config(), LossConfig::default());
        assert_eq!(cfg.generator_config(), GeneratorConfig::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 9\n[train]\nlr_schedule = [[3, 0.1]]\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.lr_schedule, vec![(3, 0.1)]);
        assert_eq!(cfg.loss, LossSection::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[generator]\np_drop = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[loss]\ngamma = 0.0\n").is_err());
        assert!(RunConfig::from_toml_str("[eval]\ntruth = \"gold\"\n").is_err());
    }

    #[test]
    fn score_source_follows_spl_switch() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.score_source().unwrap(), ScoreSource::Refined);
        cfg.loss.spl = false;
        assert_eq!(cfg.score_source().unwrap(), ScoreSource::Raw);
    }
}
