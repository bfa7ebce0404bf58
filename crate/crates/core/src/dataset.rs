//! Lesion samples, patient-level splits, vocabulary filtering and a synthetic
//! generator that stands in for a real image/report corpus.
//!
//! # File formats
//!
//! Dataset file, one record per line, tab separated:
//!
//! ```text
//! lesion_id  patient_id  split  label_ids  features  [clean_label_ids]
//! ```
//!
//! `label_ids` is a `;`-separated list of label ids (possibly empty) holding
//! the mined labels, `features` is a `,`-separated list of decimals and the
//! optional trailing field carries synthetic ground truth. Lines starting with
//! `#` are comments.
//!
//! Label file (text-mining output), one row per lesion/label pair:
//!
//! ```text
//! lesion_id  label_id  relevance
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::labelset::LabelSet;
use crate::ontology::{LabelOntology, OntologyError};
use crate::textmine::{MinedRow, Relevance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Fractions of patients assigned to train / val / test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Final avalanche of MurmurHash3. FNV-1a alone leaves the high bits nearly
/// constant across short ids that differ only in their last characters.
fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Stable split for a patient: FNV-1a of the id, mixed, mapped to `[0, 1)`
/// and compared with the cumulative ratios.
pub fn split_for_patient(patient_id: &str, ratios: &SplitRatios) -> Split {
    let total = ratios.train + ratios.val + ratios.test;
    // Top 53 bits give a uniform double in [0, 1).
    let u = (fmix64(fnv1a64(patient_id.as_bytes())) >> 11) as f64 / (1u64 << 53) as f64;
    let x = u * total;
    if x < ratios.train {
        Split::Train
    } else if x < ratios.train + ratios.val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub lesion_id: String,
    pub patient_id: String,
    pub split: Split,
    pub features: Vec<f64>,
    /// Relevant and uncertain mined labels.
    pub mined_labels: LabelSet,
    /// `expand(mined_labels)`.
    pub expanded_labels: LabelSet,
    /// Mined labels classified irrelevant by text mining, if known.
    pub irrelevant_labels: LabelSet,
    /// Ground truth; only synthetic data has it.
    pub clean_labels: Option<LabelSet>,
}

/// Which label set of a sample to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelView {
    Mined,
    Expanded,
    Clean,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sample `{lesion_id}` has {got} features, expected {expected}")]
    FeatureDim { lesion_id: String, got: usize, expected: usize },
    #[error("sample `{lesion_id}` references label {label} but the ontology has {count}")]
    LabelOutOfRange { lesion_id: String, label: usize, count: usize },
    #[error("patient `{0}` appears in more than one split")]
    PatientCrossesSplits(String),
    #[error("sample `{0}` has a non-finite feature")]
    NonFinite(String),
    #[error("no label survives vocabulary filtering")]
    EmptyVocabulary,
    #[error("corruption probability `{name}` = {value} is outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("invalid generator setting: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

/// Raw record as it appears in a dataset file, before label sets are built.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub lesion_id: String,
    pub patient_id: String,
    pub split: Split,
    pub labels: Vec<usize>,
    pub features: Vec<f64>,
    pub clean_labels: Option<Vec<usize>>,
}

/// Samples sharing one ontology and feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    ontology: Arc<LabelOntology>,
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Checks dimensions, label ranges and patient-level split disjointness.
    /// `expanded_labels` is recomputed from `mined_labels`.
    pub fn new(ontology: Arc<LabelOntology>, dim: usize, mut samples: Vec<Sample>) -> Result<Self, DatasetError> {
        let c = ontology.len();
        let mut patient_split: HashMap<&str, Split> = HashMap::new();
        for s in &samples {
            if s.features.len() != dim {
                return Err(DatasetError::FeatureDim {
                    lesion_id: s.lesion_id.clone(),
                    got: s.features.len(),
                    expected: dim,
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite(s.lesion_id.clone()));
            }
            let sets = [Some(&s.mined_labels), Some(&s.irrelevant_labels), s.clean_labels.as_ref()];
            for set in sets.into_iter().flatten() {
                if set.width() != c {
                    let label = set.iter().find(|&l| l >= c).unwrap_or(set.width());
                    return Err(DatasetError::LabelOutOfRange { lesion_id: s.lesion_id.clone(), label, count: c });
                }
            }
            match patient_split.get(s.patient_id.as_str()) {
                Some(&sp) if sp != s.split => return Err(DatasetError::PatientCrossesSplits(s.patient_id.clone())),
                _ => {
                    patient_split.insert(s.patient_id.as_str(), s.split);
                }
            }
        }
        for s in &mut samples {
            s.expanded_labels = ontology.expand(&s.mined_labels);
        }
        Ok(Self { ontology, dim, samples })
    }

    /// Builds a dataset from file records.
    pub fn from_records(ontology: Arc<LabelOntology>, records: Vec<SampleRecord>) -> Result<Self, DatasetError> {
        let c = ontology.len();
        let dim = records.first().map_or(0, |r| r.features.len());
        let to_set = |lesion_id: &str, ids: &[usize]| -> Result<LabelSet, DatasetError> {
            if let Some(&bad) = ids.iter().find(|&&l| l >= c) {
                return Err(DatasetError::LabelOutOfRange { lesion_id: lesion_id.to_string(), label: bad, count: c });
            }
            Ok(LabelSet::from_ids(c, ids.iter().copied()))
        };
        let mut samples = Vec::with_capacity(records.len());
        for r in records {
            let mined = to_set(&r.lesion_id, &r.labels)?;
            let clean = r.clean_labels.as_deref().map(|ids| to_set(&r.lesion_id, ids)).transpose()?;
            samples.push(Sample {
                expanded_labels: mined.clone(),
                mined_labels: mined,
                irrelevant_labels: LabelSet::empty(c),
                clean_labels: clean,
                lesion_id: r.lesion_id,
                patient_id: r.patient_id,
                split: r.split,
                features: r.features,
            });
        }
        Self::new(ontology, dim, samples)
    }

    pub fn ontology(&self) -> &LabelOntology {
        &self.ontology
    }

    pub fn ontology_arc(&self) -> &Arc<LabelOntology> {
        &self.ontology
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.ontology.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples in `split`, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn labels(&self, idx: usize, view: LabelView) -> Option<&LabelSet> {
        let s = &self.samples[idx];
        match view {
            LabelView::Mined => Some(&s.mined_labels),
            LabelView::Expanded => Some(&s.expanded_labels),
            LabelView::Clean => s.clean_labels.as_ref(),
        }
    }

    /// Overrides mined labels with text-mining rows joined on `lesion_id`.
    /// Relevant and uncertain rows become mined labels, irrelevant rows are
    /// kept aside. Lesions without rows are untouched. Returns the number of
    /// rows whose lesion id is not in the dataset.
    pub fn apply_label_rows(&mut self, rows: &[MinedRow]) -> Result<usize, DatasetError> {
        let c = self.num_labels();
        let mut by_lesion: BTreeMap<&str, Vec<&MinedRow>> = BTreeMap::new();
        for r in rows {
            if r.label >= c {
                return Err(DatasetError::LabelOutOfRange { lesion_id: r.lesion_id.clone(), label: r.label, count: c });
            }
            by_lesion.entry(r.lesion_id.as_str()).or_default().push(r);
        }
        let mut matched = 0;
        for s in &mut self.samples {
            if let Some(rs) = by_lesion.get(s.lesion_id.as_str()) {
                matched += rs.len();
                s.mined_labels =
                    LabelSet::from_ids(c, rs.iter().filter(|r| r.relevance.is_trainable()).map(|r| r.label));
                s.irrelevant_labels =
                    LabelSet::from_ids(c, rs.iter().filter(|r| r.relevance == Relevance::Irrelevant).map(|r| r.label));
                s.irrelevant_labels.difference_with(&s.mined_labels);
                s.expanded_labels = self.ontology.expand(&s.mined_labels);
            }
        }
        Ok(rows.len() - matched)
    }

    /// Serializes to the dataset file format.
    pub fn to_text(&self) -> String {
        let mut out =
            format!("# dataset v1 dim={} labels={} samples={}\n", self.dim, self.num_labels(), self.samples.len());
        for s in &self.samples {
            out.push_str(&s.lesion_id);
            out.push('\t');
            out.push_str(&s.patient_id);
            out.push('\t');
            out.push_str(s.split.as_str());
            out.push('\t');
            out.push_str(&join_ids(&s.mined_labels));
            out.push('\t');
            let feats: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&feats.join(","));
            if let Some(clean) = &s.clean_labels {
                out.push('\t');
                out.push_str(&join_ids(clean));
            }
            out.push('\n');
        }
        out
    }
}

fn join_ids(set: &LabelSet) -> String {
    set.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_ids(field: &str) -> Result<Vec<usize>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field.split(';').map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad label id `{t}`: {e}"))).collect()
}

/// Parses a dataset file into raw records.
pub fn parse_dataset(text: &str) -> Result<Vec<SampleRecord>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| DatasetError::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(err(format!("expected 5 or 6 tab-separated fields, found {}", fields.len())));
        }
        let lesion_id = fields[0].trim();
        let patient_id = fields[1].trim();
        if lesion_id.is_empty() || patient_id.is_empty() {
            return Err(err("empty lesion or patient id".into()));
        }
        let split: Split = fields[2].trim().parse().map_err(err)?;
        let labels = parse_ids(fields[3]).map_err(err)?;
        let features = fields[4]
            .split(',')
            .map(|t| {
                let v: f64 = t.trim().parse().map_err(|e| format!("bad feature `{t}`: {e}"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("non-finite feature `{t}`"))
                }
            })
            .collect::<Result<Vec<f64>, String>>()
            .map_err(err)?;
        let clean_labels = fields.get(5).map(|f| parse_ids(f)).transpose().map_err(err)?;
        out.push(SampleRecord {
            lesion_id: lesion_id.to_string(),
            patient_id: patient_id.to_string(),
            split,
            labels,
            features,
            clean_labels,
        });
    }
    Ok(out)
}

/// Serializes text-mining rows to the label file format.
pub fn write_label_rows(rows: &[MinedRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.lesion_id, r.label, r.relevance));
    }
    out
}

/// Parses a label file.
pub fn parse_label_rows(text: &str) -> Result<Vec<MinedRow>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| DatasetError::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let lesion_id = fields[0].trim();
        if lesion_id.is_empty() {
            return Err(err("empty lesion id".into()));
        }
        let label = fields[1].trim().parse::<usize>().map_err(|e| err(format!("bad label id: {e}")))?;
        let relevance: Relevance = fields[2].parse().map_err(err)?;
        out.push(MinedRow { lesion_id: lesion_id.to_string(), label, relevance });
    }
    Ok(out)
}

/// Per-label `(positives, negatives)` among samples of `split`.
pub fn class_frequencies(ds: &Dataset, split: Split, view: LabelView) -> Vec<(usize, usize)> {
    let idx = ds.split_indices(split);
    let n = idx.len();
    let mut pos = vec![0usize; ds.num_labels()];
    for &i in &idx {
        if let Some(set) = ds.labels(i, view) {
            for c in set.iter() {
                pos[c] += 1;
            }
        }
    }
    pos.into_iter().map(|p| (p, n - p)).collect()
}

/// Keeps labels whose expanded-label occurrence count reaches the threshold
/// in every split, then restricts the ontology and remaps ids densely.
/// Mined, irrelevant and clean label sets are restricted and expanded labels
/// recomputed under the restricted ontology.
pub fn filter_vocabulary(
    ds: &Dataset,
    min_train: usize,
    min_val: usize,
    min_test: usize,
) -> Result<(Dataset, Vec<Option<usize>>), DatasetError> {
    let c = ds.num_labels();
    let mut counts = vec![[0usize; 3]; c];
    for s in ds.samples() {
        let k = s.split as usize;
        for l in s.expanded_labels.iter() {
            counts[l][k] += 1;
        }
    }
    let keep = LabelSet::from_ids(
        c,
        (0..c).filter(|&l| counts[l][0] >= min_train && counts[l][1] >= min_val && counts[l][2] >= min_test),
    );
    restrict_labels(ds, &keep)
}

/// Keeps only the labels in `keep`, renumbering them densely in id order.
/// Sample label sets are mapped through the restriction and re-expanded
/// under the restricted ontology.
pub fn restrict_labels(ds: &Dataset, keep: &LabelSet) -> Result<(Dataset, Vec<Option<usize>>), DatasetError> {
    if keep.is_empty() {
        return Err(DatasetError::EmptyVocabulary);
    }
    let (restricted, remap) = ds.ontology().restrict(keep)?;
    let nc = restricted.len();
    let map_set = |set: &LabelSet| LabelSet::from_ids(nc, set.iter().filter_map(|l| remap[l]));
    let samples = ds
        .samples()
        .iter()
        .map(|s| Sample {
            lesion_id: s.lesion_id.clone(),
            patient_id: s.patient_id.clone(),
            split: s.split,
            features: s.features.clone(),
            mined_labels: map_set(&s.mined_labels),
            expanded_labels: LabelSet::empty(nc),
            irrelevant_labels: map_set(&s.irrelevant_labels),
            clean_labels: s.clean_labels.as_ref().map(map_set),
        })
        .collect();
    let out = Dataset::new(Arc::new(restricted), ds.dim(), samples)?;
    Ok((out, remap))
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// How mined labels are derived from clean labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    /// Probability of dropping each clean label that is an ancestor of
    /// another clean label.
    pub p_drop_parent: f64,
    /// Probability of dropping each sampled leaf.
    pub p_drop: f64,
    /// Probability of injecting one non-conflicting wrong label.
    pub p_inject: f64,
}

impl CorruptionConfig {
    pub const NONE: CorruptionConfig = CorruptionConfig { p_drop_parent: 0.0, p_drop: 0.0, p_inject: 0.0 };

    fn validate(&self) -> Result<(), DatasetError> {
        for (name, value) in
            [("p_drop_parent", self.p_drop_parent), ("p_drop", self.p_drop), ("p_inject", self.p_inject)]
        {
            if !(0.0..=1.0).contains(&value) {
                return Err(DatasetError::BadProbability { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub lesions_per_patient: usize,
    pub dim: usize,
    pub corruption: CorruptionConfig,
    pub split_ratios: SplitRatios,
    /// Maximum number of leaf labels drawn per lesion (at least one).
    pub max_leaves: usize,
    /// Exponent of the rank-frequency law over leaves; larger is more skewed.
    pub zipf_exponent: f64,
    /// Standard deviation of each prototype coordinate.
    pub prototype_scale: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            lesions_per_patient: 4,
            dim: 64,
            corruption: CorruptionConfig::NONE,
            split_ratios: SplitRatios::default(),
            max_leaves: 3,
            zipf_exponent: 1.0,
            prototype_scale: 1.0,
            noise_std: 1.0,
        }
    }
}

/// Draws an ontology-consistent dataset.
///
/// Each lesion gets 1..=`max_leaves` leaf labels drawn from a seeded
/// rank-frequency law, rejecting leaves that are closure-exclusive with what
/// is already chosen; the clean set is their expansion. Features are the sum
/// of the clean labels' Gaussian prototypes plus isotropic noise. Mined labels
/// are the clean set after [`CorruptionConfig`] is applied.
pub fn generate_synthetic(
    ontology: Arc<LabelOntology>,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    config.corruption.validate()?;
    if config.dim == 0 || config.max_leaves == 0 {
        return Err(DatasetError::BadConfig("dim and max_leaves must be positive".into()));
    }
    if !(config.noise_std >= 0.0 && config.prototype_scale >= 0.0 && config.zipf_exponent >= 0.0) {
        return Err(DatasetError::BadConfig("scales and exponent must be non-negative".into()));
    }
    let c = ontology.len();
    let leaves: Vec<usize> = (0..c).filter(|&l| ontology.is_leaf(l)).collect();
    if leaves.is_empty() {
        return Err(DatasetError::BadConfig("ontology has no labels".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proto_dist = Normal::new(0.0, config.prototype_scale).expect("finite scale");
    let noise_dist = Normal::new(0.0, config.noise_std).expect("finite scale");

    let prototypes: Vec<Vec<f64>> =
        (0..c).map(|_| (0..config.dim).map(|_| proto_dist.sample(&mut rng)).collect()).collect();

    let mut ranked = leaves.clone();
    ranked.shuffle(&mut rng);
    let weights: Vec<f64> = (0..ranked.len()).map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)).collect();
    let total: f64 = weights.iter().sum();
    let draw_leaf = |rng: &mut ChaCha8Rng| {
        let mut u = rng.random::<f64>() * total;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                return ranked[k];
            }
            u -= w;
        }
        ranked[ranked.len() - 1]
    };

    let mut samples = Vec::with_capacity(config.n_patients * config.lesions_per_patient);
    for p in 0..config.n_patients {
        let patient_id = format!("P{p:05}");
        let split = split_for_patient(&patient_id, &config.split_ratios);
        for l in 0..config.lesions_per_patient {
            let k = rng.random_range(1..=config.max_leaves);
            let mut chosen: Vec<usize> = Vec::new();
            let mut clean = LabelSet::empty(c);
            for _ in 0..k {
                // A few attempts to find a compatible leaf; otherwise stop.
                for _attempt in 0..8 {
                    let leaf = draw_leaf(&mut rng);
                    if clean.contains(leaf) || !ontology.exclusive_with(leaf).is_disjoint(&clean) {
                        continue;
                    }
                    chosen.push(leaf);
                    clean.insert(leaf);
                    clean = ontology.expand(&clean);
                    break;
                }
            }
            if chosen.is_empty() {
                let leaf = draw_leaf(&mut rng);
                chosen.push(leaf);
                clean = ontology.expand(&LabelSet::from_ids(c, [leaf]));
            }

            let mut features: Vec<f64> = (0..config.dim).map(|_| noise_dist.sample(&mut rng)).collect();
            for lab in clean.iter() {
                for (f, p) in features.iter_mut().zip(&prototypes[lab]) {
                    *f += p;
                }
            }

            let cc = &config.corruption;
            let mut mined = clean.clone();
            for lab in clean.iter() {
                let is_inner = clean.iter().any(|other| ontology.ancestors(other).is_ok_and(|a| a.contains(lab)));
                let p = if is_inner {
                    cc.p_drop_parent
                } else if chosen.contains(&lab) {
                    cc.p_drop
                } else {
                    0.0
                };
                if p > 0.0 && rng.random::<f64>() < p {
                    mined.remove(lab);
                }
            }
            if cc.p_inject > 0.0 && rng.random::<f64>() < cc.p_inject {
                let candidates: Vec<usize> =
                    (0..c).filter(|&x| !clean.contains(x) && ontology.exclusive_with(x).is_disjoint(&clean)).collect();
                if !candidates.is_empty() {
                    mined.insert(candidates[rng.random_range(0..candidates.len())]);
                }
            }

            samples.push(Sample {
                lesion_id: format!("{patient_id}-L{l}"),
                patient_id: patient_id.clone(),
                split,
                features,
                expanded_labels: LabelSet::empty(c),
                mined_labels: mined,
                irrelevant_labels: LabelSet::empty(c),
                clean_labels: Some(clean),
            });
        }
    }
    Dataset::new(ontology, config.dim, samples)
}
