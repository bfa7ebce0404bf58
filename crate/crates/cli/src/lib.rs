//! Command-line front end for the `ontolabel` library.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ontolabel", version, about = "Ontology-aware lesion labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect an ontology file.
    #[command(subcommand)]
    Ontology(OntologyCommand),
    /// Mine label rows from bookmarked sentences.
    Mine {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        sentences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Gen(RunArgs),
    /// Train a model and calibrate thresholds on the validation split.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(RunArgs),
    /// Retrieve similar lesions from the test split.
    Retrieve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Rank neighbours of this lesion instead of reporting mean ACG@k.
        #[arg(long)]
        query: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OntologyCommand {
    /// Check structure and report every violation.
    Validate { file: PathBuf },
    /// Expand `;`-separated label sets, one per line, with their ancestors.
    Expand { file: PathBuf, sets: PathBuf },
    /// Print every exclusive pair after inheritance.
    Closure { file: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub no_spl: bool,
    #[arg(long)]
    pub no_rhem: bool,
    #[arg(long)]
    pub no_triplet: bool,
    /// Train and decide on mined labels without adding ancestors.
    #[arg(long)]
    pub no_expand: bool,
    /// Train on irrelevant labels as well.
    #[arg(long)]
    pub no_relevance_filter: bool,
    /// Draw hard negatives from every non-positive label.
    #[arg(long)]
    pub rhem_all_labels: bool,
}

impl RunArgs {
    /// Loads the configuration file, then applies command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let p = &mut cfg.paths;
        for (slot, value) in [
            (&mut p.out_dir, &self.out_dir),
            (&mut p.ontology, &self.ontology),
            (&mut p.dataset, &self.dataset),
            (&mut p.labels, &self.labels),
            (&mut p.checkpoint, &self.checkpoint),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if self.no_spl {
            cfg.loss.spl = false;
        }
        if self.no_rhem {
            cfg.loss.rhem = false;
        }
        if self.no_triplet {
            cfg.loss.triplet = false;
        }
        if self.no_expand {
            cfg.train.expand = false;
        }
        if self.no_relevance_filter {
            cfg.train.relevance_filter = false;
        }
        if self.rhem_all_labels {
            cfg.loss.rhem_all_labels = true;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// Runs a parsed command. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Ontology(OntologyCommand::Validate { file }) => {
            let (ok, text) = commands::cmd_ontology_validate(&file)?;
            if ok {
                print!("{text}");
                Ok(0)
            } else {
                eprint!("{text}");
                Ok(1)
            }
        }
        Command::Ontology(OntologyCommand::Expand { file, sets }) => {
            print!("{}", commands::cmd_ontology_expand(&file, &sets)?);
            Ok(0)
        }
        Command::Ontology(OntologyCommand::Closure { file }) => {
            print!("{}", commands::cmd_ontology_closure(&file)?);
            Ok(0)
        }
        Command::Mine { ontology, sentences, out } => {
            let summary = commands::cmd_mine(&ontology, &sentences, &out)?;
            for (line, reason) in &summary.skipped {
                eprintln!("skipped line {line}: {reason}");
            }
            println!("{} label rows written to {}", summary.rows.len(), out.display());
            Ok(0)
        }
        Command::Gen(args) => {
            let path = commands::cmd_gen(&args.resolve()?)?;
            println!("dataset written to {}", path.display());
            Ok(0)
        }
        Command::Train(args) => {
            let summary = commands::cmd_train(&args.resolve()?)?;
            if let Some(last) = summary.log.last() {
                println!("{}", last.to_line());
            }
            if !summary.degenerate_labels.is_empty() {
                eprintln!("labels without both classes in train: {:?}", summary.degenerate_labels);
            }
            println!("{} labels, checkpoint written to {}", summary.labels, summary.checkpoint.display());
            Ok(0)
        }
        Command::Eval(args) => {
            let report = commands::cmd_eval(&args.resolve()?)?;
            print!("{}", report.to_text());
            Ok(0)
        }
        Command::Retrieve { run, k, query } => {
            let outcome = commands::cmd_retrieve(&run.resolve()?, k, query.as_deref())?;
            print!("{}", commands::render_retrieval(&outcome));
            Ok(0)
        }
    }
}
