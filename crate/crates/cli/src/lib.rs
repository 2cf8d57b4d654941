//! The `skillforge` command line: one subcommand per pipeline stage, plus
//! `run-all` and a `toy` command that writes a self-contained benchmark
//! directory.

pub mod config;
pub mod manifest;
pub mod stages;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use skillforge::evaluation::Experiment;
use skillforge::filter::{save_labeled, LabeledSentence};
use skillforge::io::{write_atomic, write_jsonl};
use skillforge::syngen::{build_dataset, StubClient, VariantCounts};
use skillforge::text::CharNgramEmbedder;
use skillforge::toy::{toy_build_config, toy_postings, toy_taxonomy, TOY_PARAPHRASE_RATE};

pub use config::{ClientKind, Overrides, PipelineConfig};
pub use stages::{GammaFile, Outcome, Pipeline};

pub const DEFAULT_CONFIG: &str = "skillforge.toml";

#[derive(Debug, Parser)]
#[command(name = "skillforge", version, about = "Zero-shot skill extraction pipeline")]
pub struct Cli {
    /// Pipeline config; relative artifact paths resolve against its directory.
    #[arg(long, global = true, default_value = DEFAULT_CONFIG)]
    pub config: PathBuf,
    /// Overrides the config seed for every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Rerun stages even when the manifest says they are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Generation backend.
    #[arg(long, global = true, value_enum)]
    pub client: Option<ClientKind>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sentences for every label.
    Generate,
    /// Drop near-duplicate sentences across the whole dataset.
    Dedup,
    /// Train the skill-sentence filter.
    TrainFilter,
    /// Train the bi-encoder.
    TrainEncoder,
    /// Embed every skill and write the retrieval index.
    #[command(alias = "index")]
    BuildIndex,
    /// Pick the similarity threshold on the dev postings.
    TuneGamma,
    /// Predict skills for a JSONL file of postings.
    Predict {
        #[arg(long)]
        posting_file: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Use this threshold instead of the tuned one.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run evaluation experiments and write reports.
    Evaluate {
        /// May be repeated; defaults to the configured list.
        #[arg(long = "experiment")]
        experiments: Vec<Experiment>,
    },
    /// Run every stage in order, skipping those already up to date.
    RunAll,
    /// Write a toy benchmark directory (taxonomy, postings, config).
    Toy {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            client: self.client,
        }
    }

    /// Loads the config. A missing default config file means built-in
    /// defaults rooted at the current directory.
    fn load_config(&self) -> Result<(PipelineConfig, PathBuf)> {
        let base = match self.config.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !self.config.exists() && self.config == Path::new(DEFAULT_CONFIG) {
            log::warn!("no {DEFAULT_CONFIG} found, using built-in defaults");
            let mut cfg = PipelineConfig::default();
            cfg.paths.resolve(&base);
            cfg.apply(self.overrides());
            return Ok((cfg, base));
        }
        Ok((PipelineConfig::load(&self.config, self.overrides())?, base))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Toy { out } = &cli.command {
        return write_toy(out, cli.seed.unwrap_or(42));
    }
    let (cfg, base) = cli.load_config()?;
    let _lock = manifest::RunLock::acquire(&base)?;
    let mut p = Pipeline::new(cfg, &base, cli.force)?;
    match cli.command {
        Command::Generate => p.generate().map(drop),
        Command::Dedup => p.dedup().map(drop),
        Command::TrainFilter => p.train_filter().map(drop),
        Command::TrainEncoder => p.train_encoder().map(drop),
        Command::BuildIndex => p.build_index().map(drop),
        Command::TuneGamma => p.tune_gamma().map(drop),
        Command::Predict {
            posting_file,
            output,
            gamma,
        } => p.predict(posting_file, output, gamma).map(drop),
        Command::Evaluate { experiments } => p.evaluate(&experiments),
        Command::RunAll => p.run_all(),
        Command::Toy { .. } => unreachable!(),
    }
}

/// Toy benchmark shape: 50 skills in 5 groups.
const TOY_SKILLS: usize = 50;
const TOY_GROUPS: usize = 5;

/// Writes taxonomy.csv, skillforge.toml, dev_postings.jsonl, postings.jsonl
/// and filter_labeled.jsonl into `out`. Postings and labeled sentences come
/// from a separate stub generation (seed + 1) so they never share text with
/// the training data.
pub fn write_toy(out: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let tax = toy_taxonomy(TOY_SKILLS, TOY_GROUPS, seed)?;
    write_atomic(&out.join("taxonomy.csv"), &tax.to_csv_bytes()?)?;

    let mut cfg = PipelineConfig::toy();
    cfg.seed = seed;
    write_atomic(&out.join(DEFAULT_CONFIG), cfg.to_toml()?.as_bytes())?;

    let mut build = toy_build_config(seed + 1);
    build.counts = VariantCounts {
        single_per_skill: 4,
        multi_constrained_pairs: 20,
        multi_random_pairs: 0,
        multi_per_pair: 2,
        none_total: 100,
        none_per_prompt: 10,
    };
    let client = StubClient::new(seed + 1).with_paraphrase(TOY_PARAPHRASE_RATE);
    let (data, _) = build_dataset(&tax, &client, &build, &CharNgramEmbedder::default())?;
    let positives: Vec<_> = data.samples.iter().filter(|s| !s.skill_ids.is_empty()).cloned().collect();
    let negatives: Vec<_> = data.d_none().into_iter().cloned().collect();

    let dev = toy_postings(&positives, &negatives, 20, 4, 2, seed + 2)?;
    let test = toy_postings(&positives, &negatives, 40, 4, 2, seed + 3)?;
    write_jsonl(&out.join("dev_postings.jsonl"), &dev)?;
    write_jsonl(&out.join("postings.jsonl"), &test)?;

    let labeled: Vec<LabeledSentence> = positives
        .iter()
        .step_by(2)
        .map(|s| LabeledSentence {
            text: s.text.clone(),
            label: true,
        })
        .chain(negatives.iter().map(|s| LabeledSentence {
            text: s.text.clone(),
            label: false,
        }))
        .collect();
    save_labeled(&out.join("filter_labeled.jsonl"), &labeled)?;
    println!(
        "toy: wrote {} skills, {} dev and {} test postings, {} labeled sentences to {}",
        tax.len(),
        dev.len(),
        test.len(),
        labeled.len(),
        out.display()
    );
    Ok(())
}
