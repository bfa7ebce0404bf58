//! Command implementations. Each reads its inputs, writes into a fresh
//! output directory and returns a summary for the caller to print.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ontolabel::dataset::{self, Dataset, Split};
use ontolabel::eval::{self, Calibration, EvalReport, RetrievalSummary};
use ontolabel::model::{Checkpoint, ModelParams};
use ontolabel::ontology::{self, OntologySpec};
use ontolabel::textmine::{self, MinedRow};
use ontolabel::trainer::{self, EpochLog};
use ontolabel::{LabelOntology, LabelSet};
use tracing::info;

use crate::config::RunConfig;

pub const CONFIG_ECHO: &str = "config.toml";
pub const DATASET_FILE: &str = "dataset.tsv";
pub const ONTOLOGY_FILE: &str = "ontology.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";
pub const RETRIEVAL_FILE: &str = "retrieval.txt";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| anyhow!("paths.{key} is not set"))
}

/// Creates `dir`, which must not exist yet or be empty.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
        if entries.next().is_some() {
            bail!("output directory {} is not empty", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = required(&cfg.paths.out_dir, "out_dir")?.to_path_buf();
    fresh_dir(&dir)?;
    write(&dir.join(CONFIG_ECHO), &cfg.to_toml())?;
    Ok(dir)
}

/// Parses an ontology file, keeping the authored spec for diagnostics.
pub fn load_spec(path: &Path) -> Result<OntologySpec> {
    ontology::parse_spec(&read(path)?).with_context(|| format!("in {}", path.display()))
}

pub fn load_ontology(path: &Path) -> Result<LabelOntology> {
    let spec = load_spec(path)?;
    let report = ontology::validate(&spec);
    if !report.is_ok() {
        bail!("{} is not a valid ontology:\n{}", path.display(), report.render(&spec));
    }
    Ok(LabelOntology::new(spec)?)
}

/// Outcome of `ontology validate`: whether it passed and the rendered report.
pub fn cmd_ontology_validate(path: &Path) -> Result<(bool, String)> {
    let spec = load_spec(path)?;
    let report = ontology::validate(&spec);
    let text = if report.is_ok() {
        let onto = LabelOntology::new(spec)?;
        format!(
            "ok: {} labels, {} parent edges, {} authored exclusions, {} exclusive pairs after closure\n",
            onto.len(),
            onto.parent_edges().len(),
            onto.exclusive_pairs().len(),
            onto.exclusivity_closure().len()
        )
    } else {
        report.render(&spec)
    };
    Ok((report.is_ok(), text))
}

/// Parses `name; name; ...` lines into label sets. Blank lines are empty
/// sets, `#` lines are skipped.
pub fn parse_label_lines(onto: &LabelOntology, text: &str) -> Result<Vec<LabelSet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut set = LabelSet::empty(onto.len());
        for name in line.split(';').map(str::trim).filter(|n| !n.is_empty()) {
            let id = onto.id_of(name).ok_or_else(|| anyhow!("line {}: unknown label `{name}`", i + 1))?;
            set.insert(id);
        }
        out.push(set);
    }
    Ok(out)
}

pub fn format_label_line(onto: &LabelOntology, set: &LabelSet) -> String {
    set.iter().map(|l| onto.name(l)).collect::<Vec<_>>().join("; ")
}

pub fn cmd_ontology_expand(ontology: &Path, sets: &Path) -> Result<String> {
    let onto = load_ontology(ontology)?;
    let sets = parse_label_lines(&onto, &read(sets)?).with_context(|| format!("in {}", sets.display()))?;
    let mut out = String::new();
    for s in sets {
        out.push_str(&format_label_line(&onto, &onto.expand(&s)));
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_ontology_closure(ontology: &Path) -> Result<String> {
    let onto = load_ontology(ontology)?;
    let mut out = String::new();
    for (a, b) in onto.exclusivity_closure() {
        out.push_str(&format!("{} <-> {}\n", onto.name(a), onto.name(b)));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MineSummary {
    pub rows: Vec<MinedRow>,
    /// `(line number, reason)` of sentences that could not be mined.
    pub skipped: Vec<(usize, String)>,
}

/// Mines label rows from a sentence file and writes them to `out`.
pub fn cmd_mine(ontology: &Path, sentences: &Path, out: &Path) -> Result<MineSummary> {
    let onto = load_ontology(ontology)?;
    let text = read(sentences)?;
    let records = textmine::parse_sentences(&text).with_context(|| format!("in {}", sentences.display()))?;
    let (rows, skipped) = textmine::mine_records(&records, &onto);
    // Map record indices back to file lines for the diagnostics.
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !(l.trim().is_empty() || l.starts_with('#')))
        .map(|(i, _)| i + 1)
        .collect();
    let skipped = skipped.into_iter().map(|(i, e)| (lines[i], e.to_string())).collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write(out, &dataset::write_label_rows(&rows))?;
    info!(rows = rows.len(), version = textmine::RULESET_VERSION, "mined label rows");
    Ok(MineSummary { rows, skipped })
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    let onto = Arc::new(load_ontology(required(&cfg.paths.ontology, "ontology")?)?);
    let ds = dataset::generate_synthetic(onto.clone(), &cfg.generator_config(), cfg.seed)?;
    let dir = out_dir(cfg)?;
    write(&dir.join(ONTOLOGY_FILE), &ontology::write_spec(&onto.to_spec()))?;
    let path = dir.join(DATASET_FILE);
    write(&path, &ds.to_text())?;
    info!(samples = ds.len(), path = %path.display(), "generated dataset");
    Ok(path)
}

/// Loads the dataset named in the config, joining mined label rows if any.
pub fn load_dataset(cfg: &RunConfig, onto: Arc<LabelOntology>) -> Result<Dataset> {
    let path = required(&cfg.paths.dataset, "dataset")?;
    let records = dataset::parse_dataset(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    let mut ds = Dataset::from_records(onto, records).with_context(|| format!("in {}", path.display()))?;
    if let Some(labels) = &cfg.paths.labels {
        let rows = dataset::parse_label_rows(&read(labels)?).with_context(|| format!("in {}", labels.display()))?;
        let unmatched = ds.apply_label_rows(&rows)?;
        if unmatched > 0 {
            tracing::warn!(unmatched, "label rows without a matching lesion");
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: Vec<EpochLog>,
    pub labels: usize,
    pub degenerate_labels: Vec<usize>,
    pub uncalibrated_labels: Vec<usize>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.check()?;
    let onto = Arc::new(load_ontology(required(&cfg.paths.ontology, "ontology")?)?);
    let full = load_dataset(cfg, onto)?;
    let t = &cfg.train;
    let (ds, remap) = dataset::filter_vocabulary(&full, t.min_train, t.min_val, t.min_test)?;
    let dir = out_dir(cfg)?;

    let params = ModelParams::new(ds.dim(), ds.num_labels(), cfg.model_config(), cfg.seed);
    let outcome = trainer::train(&ds, params, &cfg.train_config())?;
    let options = cfg.eval_options()?;
    let calibration = eval::calibrate(&outcome.params, &ds, &options)?;
    let checkpoint = Checkpoint {
        params: outcome.params,
        label_remap: remap,
        thresholds: Some(calibration.iter().map(|k| k.threshold).collect()),
        score_source: options.score_source,
        expand_decisions: options.expand_decisions,
    };
    let path = dir.join(CHECKPOINT_FILE);
    write(&path, &checkpoint.to_text())?;
    let log: String = outcome.log.iter().map(|l| l.to_line() + "\n").collect();
    write(&dir.join(TRAIN_LOG_FILE), &log)?;
    Ok(TrainSummary {
        checkpoint: path,
        log: outcome.log,
        labels: ds.num_labels(),
        degenerate_labels: outcome.degenerate_labels,
        uncalibrated_labels: calibration.iter().enumerate().filter(|(_, k)| k.no_positives).map(|(i, _)| i).collect(),
    })
}

/// Dataset and checkpoint for evaluation, with the dataset restricted to
/// the checkpoint's vocabulary.
fn load_trained(cfg: &RunConfig) -> Result<(Dataset, Checkpoint)> {
    let onto = Arc::new(load_ontology(required(&cfg.paths.ontology, "ontology")?)?);
    let full = load_dataset(cfg, onto)?;
    let path = required(&cfg.paths.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::from_text(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    if ckpt.label_remap.len() != full.num_labels() {
        bail!(
            "checkpoint was trained on {} ontology labels, the ontology has {}",
            ckpt.label_remap.len(),
            full.num_labels()
        );
    }
    let keep = LabelSet::from_ids(full.num_labels(), (0..full.num_labels()).filter(|&l| ckpt.label_remap[l].is_some()));
    let (ds, remap) = dataset::restrict_labels(&full, &keep)?;
    if remap != ckpt.label_remap {
        bail!("checkpoint label remap does not match the ontology");
    }
    if ds.dim() != ckpt.params.input_dim() || ds.num_labels() != ckpt.params.num_labels() {
        bail!(
            "checkpoint expects {} features and {} labels, dataset has {} and {}",
            ckpt.params.input_dim(),
            ckpt.params.num_labels(),
            ds.dim(),
            ds.num_labels()
        );
    }
    Ok((ds, ckpt))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.check()?;
    let (ds, ckpt) = load_trained(cfg)?;
    let mut options = cfg.eval_options()?;
    options.score_source = ckpt.score_source;
    options.expand_decisions = ckpt.expand_decisions;
    let calibration = match &ckpt.thresholds {
        Some(t) => t.iter().map(|&threshold| Calibration { threshold, f1: f64::NAN, no_positives: false }).collect(),
        None => eval::calibrate(&ckpt.params, &ds, &options)?,
    };
    let report = eval::evaluate(&ckpt.params, &ds, &calibration, &options)?;
    let dir = out_dir(cfg)?;
    write(&dir.join(REPORT_FILE), &report.to_text())?;
    write(&dir.join(REPORT_KV_FILE), &report.to_kv())?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub enum RetrieveOutcome {
    /// Ranked lesion ids for one query, and whether fewer than `k` were found.
    Query {
        lesion_id: String,
        ranked: Vec<String>,
        short: bool,
    },
    Summary(RetrievalSummary),
}

/// Either ranks test-split lesions for one query lesion or reports mean
/// ACG@`k` over every test query.
pub fn cmd_retrieve(cfg: &RunConfig, k: usize, query: Option<&str>) -> Result<RetrieveOutcome> {
    if k == 0 {
        bail!("k must be >= 1");
    }
    cfg.check()?;
    let (ds, ckpt) = load_trained(cfg)?;
    let outcome = match query {
        Some(id) => {
            let q = ds
                .samples()
                .iter()
                .position(|s| s.lesion_id == id)
                .ok_or_else(|| anyhow!("no lesion `{id}` in the dataset"))?;
            let (ranked, short) = eval::retrieve_lesions(&ckpt.params, &ds, q, Split::Test, k)?;
            RetrieveOutcome::Query { lesion_id: id.to_string(), ranked, short }
        }
        None => {
            RetrieveOutcome::Summary(eval::evaluate_retrieval(&ckpt.params, &ds, Split::Test, cfg.truth_view()?, k)?)
        }
    };
    let dir = out_dir(cfg)?;
    write(&dir.join(RETRIEVAL_FILE), &render_retrieval(&outcome))?;
    Ok(outcome)
}

pub fn render_retrieval(outcome: &RetrieveOutcome) -> String {
    match outcome {
        RetrieveOutcome::Query { lesion_id, ranked, short } => {
            let mut out = format!("query {lesion_id}\n");
            for (rank, id) in ranked.iter().enumerate() {
                out.push_str(&format!("{}\t{id}\n", rank + 1));
            }
            if *short {
                out.push_str("# fewer results than requested after excluding the query's patient\n");
            }
            out
        }
        RetrieveOutcome::Summary(s) => {
            format!("ACG@{} = {:.4} over {} queries ({} short)\n", s.k, s.acg, s.queries, s.short_queries)
        }
    }
}
