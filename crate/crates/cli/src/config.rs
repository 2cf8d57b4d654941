//! Pipeline configuration.
//!
//! Precedence, highest first: command-line flags, the TOML file, built-in
//! defaults. The top-level `seed` is copied into every stage, so per-stage
//! `seed` keys in the file have no effect.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use skillforge::encoder::EncoderConfig;
use skillforge::evaluation::{Experiment, ExperimentConfig, ModelVariant};
use skillforge::filter::FilterConfig;
use skillforge::index::{default_gamma_grid, RetrievalParams, DEFAULT_BUDGET};
use skillforge::syngen::{BuildConfig, DecodingParams, HttpClientConfig, QcParams, VariantCounts};
use skillforge::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Http,
    #[default]
    Stub,
}

impl ClientKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClientKind::Http => "http",
            ClientKind::Stub => "stub",
        }
    }
}

/// Artifact locations. Relative paths are resolved against the directory
/// holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub taxonomy: PathBuf,
    pub generated: PathBuf,
    pub generation_report: PathBuf,
    pub dataset: PathBuf,
    pub dedup_report: PathBuf,
    pub filter: PathBuf,
    pub encoder: PathBuf,
    pub history: PathBuf,
    pub index: PathBuf,
    pub gamma: PathBuf,
    /// Annotated postings for γ tuning.
    pub dev_postings: PathBuf,
    /// Postings to predict; annotated ones also feed `end_to_end`.
    pub postings: PathBuf,
    pub predictions: PathBuf,
    /// Labeled sentences for `filter_eval`.
    pub labeled: PathBuf,
    pub reports: PathBuf,
    pub manifest: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let a = |name: &str| PathBuf::from("artifacts").join(name);
        Self {
            taxonomy: "taxonomy.csv".into(),
            generated: a("generated.jsonl"),
            generation_report: a("generation_report.json"),
            dataset: a("dataset.jsonl"),
            dedup_report: a("dedup_report.json"),
            filter: a("filter.ckpt"),
            encoder: a("encoder.ckpt"),
            history: a("training_history.csv"),
            index: a("skills.idx"),
            gamma: a("gamma.json"),
            dev_postings: "dev_postings.jsonl".into(),
            postings: "postings.jsonl".into(),
            predictions: a("predictions.jsonl"),
            labeled: "filter_labeled.jsonl".into(),
            reports: "reports".into(),
            manifest: a("manifest.jsonl"),
        }
    }
}

impl Paths {
    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.taxonomy,
            &mut self.generated,
            &mut self.generation_report,
            &mut self.dataset,
            &mut self.dedup_report,
            &mut self.filter,
            &mut self.encoder,
            &mut self.history,
            &mut self.index,
            &mut self.gamma,
            &mut self.dev_postings,
            &mut self.postings,
            &mut self.predictions,
            &mut self.labeled,
            &mut self.reports,
            &mut self.manifest,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub counts: VariantCounts,
    pub decoding: DecodingParams,
    pub qc: QcParams,
    pub max_in_flight: usize,
    /// Keyword paraphrase probability for the stub client.
    pub paraphrase_rate: f64,
    pub http: HttpClientConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let b = BuildConfig::default();
        Self {
            counts: b.counts,
            decoding: b.decoding,
            qc: b.qc,
            max_in_flight: b.max_in_flight,
            paraphrase_rate: 0.0,
            http: HttpClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub cutoff: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            cutoff: QcParams::default().dedup_cutoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub budget: usize,
    pub gamma_grid: Vec<f64>,
    /// Filter threshold override; the trained filter's τ otherwise.
    pub tau: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            gamma_grid: default_gamma_grid(),
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Experiments run by `evaluate` without `--experiment` and by `run-all`.
    pub experiments: Vec<Experiment>,
    pub recall_ks: Vec<usize>,
    pub posting_ks: Vec<usize>,
    pub models: Vec<ModelVariant>,
    pub dev_fraction: f64,
    pub noise_rates: Vec<f64>,
    pub scaling_sizes: Vec<usize>,
    pub ablation_margins: Vec<f64>,
    pub ablation_negatives: Vec<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            experiments: Vec::new(),
            recall_ks: e.recall_ks,
            posting_ks: e.posting_ks,
            models: e.models,
            dev_fraction: e.dev_fraction,
            noise_rates: e.noise_rates,
            scaling_sizes: e.scaling_sizes,
            ablation_margins: e.ablation_margins,
            ablation_negatives: e.ablation_negatives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub client: ClientKind,
    /// Share of the synthetic data held out from encoder training.
    pub holdout_fraction: f64,
    pub paths: Paths,
    pub generate: GenerateConfig,
    pub dedup: DedupConfig,
    pub filter: FilterConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            client: ClientKind::Stub,
            holdout_fraction: 0.2,
            paths: Paths::default(),
            generate: GenerateConfig::default(),
            dedup: DedupConfig::default(),
            filter: FilterConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub client: Option<ClientKind>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, applies `overrides` and resolves relative paths.
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(client) = overrides.client {
            self.client = client;
        }
        self.generate.http.max_in_flight = self.generate.max_in_flight;
        self.filter.seed = self.seed;
        self.encoder.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            counts: self.generate.counts,
            decoding: self.generate.decoding,
            qc: self.generate.qc,
            max_in_flight: self.generate.max_in_flight,
            seed: self.seed,
        }
    }

    pub fn retrieval_params(&self, gamma: f64) -> RetrievalParams {
        RetrievalParams {
            budget: self.retrieval.budget,
            gamma,
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        let e = &self.evaluate;
        ExperimentConfig {
            seed: self.seed,
            holdout_fraction: self.holdout_fraction,
            recall_ks: e.recall_ks.clone(),
            posting_ks: e.posting_ks.clone(),
            models: e.models.clone(),
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            retrieval: self.retrieval_params(RetrievalParams::default().gamma),
            gamma_grid: self.retrieval.gamma_grid.clone(),
            dev_fraction: e.dev_fraction,
            noise_rates: e.noise_rates.clone(),
            scaling_sizes: e.scaling_sizes.clone(),
            ablation_margins: e.ablation_margins.clone(),
            ablation_negatives: e.ablation_negatives.clone(),
            tau: self.retrieval.tau,
        }
    }

    /// A config for the toy benchmark with paths relative to its directory.
    pub fn toy() -> Self {
        let build = skillforge::toy::toy_build_config(42);
        Self {
            generate: GenerateConfig {
                counts: build.counts,
                paraphrase_rate: skillforge::toy::TOY_PARAPHRASE_RATE,
                ..GenerateConfig::default()
            },
            encoder: EncoderConfig::toy(),
            train: TrainConfig::toy(),
            evaluate: EvaluateConfig {
                experiments: vec![Experiment::FilterEval, Experiment::EndToEnd, Experiment::Robustness],
                ..EvaluateConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.train.learning_rate, 2e-5);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.train.margin, 0.5);
        assert_eq!(cfg.train.negatives, 5);
        assert_eq!(cfg.encoder.embed_dim, 128);
        assert_eq!(cfg.retrieval.budget, 50);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let mut cfg = PipelineConfig::parse("seed = 7\nclient = \"http\"\n").unwrap();
        cfg.apply(Overrides::default());
        assert_eq!((cfg.seed, cfg.client, cfg.train.seed), (7, ClientKind::Http, 7));
        cfg.apply(Overrides {
            seed: Some(9),
            client: Some(ClientKind::Stub),
        });
        assert_eq!((cfg.seed, cfg.client, cfg.encoder.seed, cfg.filter.seed), (9, ClientKind::Stub, 9, 9));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = PipelineConfig::parse("seed = 1\n[train]\nepochs = \"many\"\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 3"), "{msg}");
        let err = PipelineConfig::parse("sed = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 1"));
    }

    #[test]
    fn toy_config_round_trips_through_toml() {
        let cfg = PipelineConfig::toy();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[paths]\ntaxonomy = \"tax.csv\"\nindex = \"/abs/i.idx\"\n").unwrap();
        let cfg = PipelineConfig::load(&path, Overrides::default()).unwrap();
        assert_eq!(cfg.paths.taxonomy, dir.path().join("tax.csv"));
        assert_eq!(cfg.paths.index, PathBuf::from("/abs/i.idx"));
        assert_eq!(cfg.paths.encoder, dir.path().join("artifacts/encoder.ckpt"));
    }
}
