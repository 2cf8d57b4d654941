//! Pipeline stages. Every stage checks its inputs, skips itself when the
//! manifest shows identical inputs and parameters, writes its outputs
//! atomically and appends a manifest record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use skillforge::encoder::BiEncoderModel;
use skillforge::evaluation::{
    holdout_split, load_gold_postings, run_experiment, Experiment, ExperimentInputs, GoldPosting,
};
use skillforge::filter::{load_labeled, train_filter, FilterModel};
use skillforge::index::{
    build_index, load_index, predict_postings, save_index, tune_gamma_on_postings, SkillIndex,
};
use skillforge::io::{read_jsonl, sha256_hex, write_atomic, write_jsonl};
use skillforge::syngen::{build_dataset, dedup, HttpLlmClient, LlmClient, StubClient, SyntheticDataset, SyntheticSample};
use skillforge::taxonomy::{load_taxonomy, SkillTaxonomy};
use skillforge::text::CharNgramEmbedder;
use skillforge::trainer::train_with_validation;

use crate::config::{ClientKind, PipelineConfig};
use crate::manifest::{hash_file, Manifest, ManifestRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Ran { seconds: f64 },
    Skipped,
}

/// A file a stage reads, with a readable name and the command producing it.
struct Input<'a> {
    name: &'static str,
    path: &'a Path,
    producer: Option<&'static str>,
}

fn input<'a>(name: &'static str, path: &'a Path, producer: Option<&'static str>) -> Input<'a> {
    Input { name, path, producer }
}

/// Tuned retrieval threshold, written by `tune-gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFile {
    pub gamma: f64,
    pub f1_at_5: f64,
    pub curve: Vec<(f64, f64)>,
    pub tau: f64,
    pub budget: usize,
}

/// A posting to predict; any other fields are ignored.
#[derive(Debug, Clone, Deserialize)]
struct PostingInput {
    posting_id: String,
    text: String,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    base: PathBuf,
    force: bool,
    manifest: Manifest,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, base: &Path, force: bool) -> Result<Self> {
        let manifest = Manifest::open(&cfg.paths.manifest)?;
        Ok(Self {
            cfg,
            base: base.to_path_buf(),
            force,
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn key(&self, p: &Path) -> String {
        p.strip_prefix(&self.base).unwrap_or(p).display().to_string()
    }

    fn run_stage(
        &mut self,
        stage: &str,
        inputs: &[Input<'_>],
        outputs: &[&Path],
        params: serde_json::Value,
        body: impl FnOnce(&Self) -> Result<()>,
    ) -> Result<Outcome> {
        let mut hashes = BTreeMap::new();
        for i in inputs {
            if !i.path.exists() {
                let how = match i.producer {
                    Some(cmd) => format!("run `skillforge {cmd}` first"),
                    None => "provide it or set its path in the config".to_string(),
                };
                bail!("{stage}: missing prerequisite {} at {} ({how})", i.name, i.path.display());
            }
            let key = self.key(i.path);
            let h = hash_file(i.path)?;
            self.manifest.verify(&key, &h).with_context(|| format!("{stage}: {} failed verification", i.name))?;
            hashes.insert(key, h);
        }
        let fingerprint = sha256_hex(&serde_json::to_vec(&json!({
            "stage": stage,
            "inputs": hashes,
            "params": params,
            "seed": self.cfg.seed,
        }))?);
        let out_keys: Vec<String> = outputs.iter().map(|p| self.key(p)).collect();
        let fresh = self
            .manifest
            .records()
            .iter()
            .rev()
            .find(|r| r.stage == stage && r.outputs.keys().eq(out_keys.iter()))
            .is_some_and(|r| r.fingerprint == fingerprint)
            && outputs.iter().all(|p| p.exists());
        if fresh && !self.force {
            println!("{stage}: up to date, skipped");
            return Ok(Outcome::Skipped);
        }
        let start = Instant::now();
        body(self).with_context(|| format!("stage {stage} failed"))?;
        let seconds = start.elapsed().as_secs_f64();
        let mut out = BTreeMap::new();
        for p in outputs {
            out.insert(self.key(p), hash_file(p)?);
        }
        self.manifest.append(ManifestRecord {
            stage: stage.to_string(),
            fingerprint,
            seed: self.cfg.seed,
            inputs: hashes,
            outputs: out,
            params,
            wall_clock_seconds: seconds,
        })?;
        println!("{stage}: done in {seconds:.1}s");
        Ok(Outcome::Ran { seconds })
    }

    fn client(&self) -> Box<dyn LlmClient> {
        match self.cfg.client {
            ClientKind::Stub => {
                Box::new(StubClient::new(self.cfg.seed).with_paraphrase(self.cfg.generate.paraphrase_rate))
            }
            ClientKind::Http => Box::new(HttpLlmClient::new(self.cfg.generate.http.clone())),
        }
    }

    pub fn generate(&mut self) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let mut params = json!({
            "build": self.cfg.build_config(),
            "client": self.cfg.client.as_str(),
        });
        match self.cfg.client {
            ClientKind::Stub => params["paraphrase_rate"] = json!(self.cfg.generate.paraphrase_rate),
            ClientKind::Http => {
                params["endpoint"] = json!(self.cfg.generate.http.endpoint);
                params["model"] = json!(self.cfg.generate.http.model);
            }
        }
        self.run_stage(
            "generate",
            &[input("taxonomy", &p.taxonomy, None)],
            &[&p.generated, &p.generation_report],
            params,
            |s| {
                let tax = load_taxonomy(&p.taxonomy)?;
                let client = s.client();
                let (data, report) =
                    build_dataset(&tax, client.as_ref(), &s.cfg.build_config(), &CharNgramEmbedder::default())?;
                if !report.under_represented.is_empty() {
                    log::warn!("{} labels ended below their target count", report.under_represented.len());
                }
                data.save_jsonl(&p.generated)?;
                write_atomic(&p.generation_report, &serde_json::to_vec_pretty(&report)?)?;
                println!("generate: {} samples, {} client calls", data.len(), report.client_calls);
                Ok(())
            },
        )
    }

    pub fn dedup(&mut self) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let cutoff = self.cfg.dedup.cutoff;
        self.run_stage(
            "dedup",
            &[input("generated dataset", &p.generated, Some("generate"))],
            &[&p.dataset, &p.dedup_report],
            json!({ "cutoff": cutoff }),
            |_| {
                let data = SyntheticDataset::load_jsonl(&p.generated)?;
                let out = dedup(&data.samples, &CharNgramEmbedder::default(), cutoff)?;
                SyntheticDataset::new(out.kept.clone()).save_jsonl(&p.dataset)?;
                let report = json!({
                    "input": data.len(),
                    "kept": out.kept.len(),
                    "exact_duplicates": out.exact_duplicates,
                    "near_duplicates": out.near_duplicates,
                    "embed_failures": out.embed_failures,
                    "removed_fraction": out.removed_count as f64 / data.len().max(1) as f64,
                });
                write_atomic(&p.dedup_report, &serde_json::to_vec_pretty(&report)?)?;
                println!("dedup: kept {} of {}", out.kept.len(), data.len());
                Ok(())
            },
        )
    }

    pub fn train_filter(&mut self) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let fc = self.cfg.filter.clone();
        self.run_stage(
            "train-filter",
            &[input("dataset", &p.dataset, Some("dedup"))],
            &[&p.filter],
            serde_json::to_value(&fc)?,
            |_| {
                let data = SyntheticDataset::load_jsonl(&p.dataset)?;
                let positives: Vec<&SyntheticSample> = match fc.positive_set.as_str() {
                    "single" => data.d_single(),
                    "multi" => data.d_multi(),
                    "combined" => data.samples.iter().filter(|s| !s.skill_ids.is_empty()).collect(),
                    other => bail!("unknown filter positive_set {other:?} (single, multi or combined)"),
                };
                let positives: Vec<&str> = positives.into_iter().map(|s| s.text.as_str()).collect();
                let negatives: Vec<&str> = data.d_none().into_iter().map(|s| s.text.as_str()).collect();
                let model = train_filter(&positives, &negatives, &fc)?;
                model.save(&p.filter)?;
                println!("train-filter: tau = {}", model.threshold());
                Ok(())
            },
        )
    }

    pub fn train_encoder(&mut self) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let params = json!({
            "encoder": self.cfg.encoder,
            "train": self.cfg.train,
            "holdout_fraction": self.cfg.holdout_fraction,
        });
        self.run_stage(
            "train-encoder",
            &[
                input("taxonomy", &p.taxonomy, None),
                input("dataset", &p.dataset, Some("dedup")),
            ],
            &[&p.encoder, &p.history],
            params,
            |s| {
                let tax = load_taxonomy(&p.taxonomy)?;
                let data = SyntheticDataset::load_jsonl(&p.dataset)?;
                let (train, test) = holdout_split(&data.samples, s.cfg.holdout_fraction, s.cfg.seed)?;
                let validation: Vec<_> = test.into_iter().filter(|x| !x.skill_ids.is_empty()).collect();
                let model = BiEncoderModel::new(s.cfg.encoder.clone())?;
                let (model, history) =
                    train_with_validation(model, &SyntheticDataset::new(train), &validation, &tax, &s.cfg.train)?;
                model.save(&p.encoder)?;
                history.save_csv(&p.history)?;
                if let Some(last) = history.epochs.last() {
                    println!("train-encoder: final loss {:.5}, hold-out MRR {:.4}", last.loss, last.mrr);
                }
                Ok(())
            },
        )
    }

    pub fn build_index(&mut self) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        self.run_stage(
            "build-index",
            &[
                input("encoder checkpoint", &p.encoder, Some("train-encoder")),
                input("taxonomy", &p.taxonomy, None),
            ],
            &[&p.index],
            json!({}),
            |_| {
                let model = BiEncoderModel::load(&p.encoder)?;
                let tax = load_taxonomy(&p.taxonomy)?;
                save_index(&build_index(&model, &tax)?, &p.index)?;
                Ok(())
            },
        )
    }

    pub fn tune_gamma(&mut self) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let r = self.cfg.retrieval.clone();
        self.run_stage(
            "tune-gamma",
            &[
                input("filter checkpoint", &p.filter, Some("train-filter")),
                input("encoder checkpoint", &p.encoder, Some("train-encoder")),
                input("skill index", &p.index, Some("build-index")),
                input("dev postings", &p.dev_postings, None),
            ],
            &[&p.gamma],
            serde_json::to_value(&r)?,
            |_| {
                let (filter, model, index) = load_models(&p.filter, &p.encoder, &p.index)?;
                let dev = load_gold_postings(&p.dev_postings)?;
                let tau = r.tau.unwrap_or(filter.threshold());
                let choice = tune_gamma_on_postings(Some(&filter), &model, &index, &dev, tau, r.budget, &r.gamma_grid)?;
                let out = GammaFile {
                    gamma: choice.gamma,
                    f1_at_5: choice.f1_at_5,
                    curve: choice.curve,
                    tau,
                    budget: r.budget,
                };
                write_atomic(&p.gamma, &serde_json::to_vec_pretty(&out)?)?;
                println!("tune-gamma: gamma* = {} (dev F1@5 {:.4})", out.gamma, out.f1_at_5);
                Ok(())
            },
        )
    }

    pub fn predict(
        &mut self,
        posting_file: Option<PathBuf>,
        output: Option<PathBuf>,
        gamma: Option<f64>,
    ) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let postings = posting_file.unwrap_or(p.postings.clone());
        let output = output.unwrap_or(p.predictions.clone());
        let r = self.cfg.retrieval.clone();
        let mut inputs = vec![
            input("filter checkpoint", &p.filter, Some("train-filter")),
            input("encoder checkpoint", &p.encoder, Some("train-encoder")),
            input("skill index", &p.index, Some("build-index")),
            input("posting file", &postings, None),
        ];
        if gamma.is_none() {
            inputs.push(input("tuned gamma", &p.gamma, Some("tune-gamma")));
        }
        let params = json!({ "budget": r.budget, "tau": r.tau, "gamma": gamma });
        self.run_stage("predict", &inputs, &[&output], params, |s| {
            let (filter, model, index) = load_models(&p.filter, &p.encoder, &p.index)?;
            let gamma = match gamma {
                Some(g) => g,
                None => read_gamma(&p.gamma)?.gamma,
            };
            let tau = r.tau.unwrap_or(filter.threshold());
            let items: Vec<PostingInput> = read_jsonl(&postings)?;
            let items: Vec<GoldPosting> = items
                .into_iter()
                .map(|x| GoldPosting {
                    posting_id: x.posting_id,
                    text: x.text,
                    skill_ids: Vec::new(),
                })
                .collect();
            let preds = predict_postings(Some(&filter), &model, &index, &items, tau, &s.cfg.retrieval_params(gamma))?;
            write_jsonl(&output, &preds)?;
            println!("predict: {} postings, gamma {gamma}, tau {tau}", preds.len());
            Ok(())
        })
    }

    pub fn evaluate(&mut self, experiments: &[Experiment]) -> Result<()> {
        let list = if experiments.is_empty() {
            self.cfg.evaluate.experiments.clone()
        } else {
            experiments.to_vec()
        };
        if list.is_empty() {
            bail!("no experiments selected (use --experiment or evaluate.experiments in the config)");
        }
        for e in list {
            self.evaluate_one(e)?;
        }
        Ok(())
    }

    fn evaluate_one(&mut self, experiment: Experiment) -> Result<Outcome> {
        let p = self.cfg.paths.clone();
        let tax = input("taxonomy", &p.taxonomy, None);
        let data = input("dataset", &p.dataset, Some("dedup"));
        let enc = input("encoder checkpoint", &p.encoder, Some("train-encoder"));
        let filt = input("filter checkpoint", &p.filter, Some("train-filter"));
        let idx = input("skill index", &p.index, Some("build-index"));
        let post = input("annotated postings", &p.postings, None);
        let inputs: Vec<Input<'_>> = match experiment {
            Experiment::FilterEval => vec![filt, input("labeled sentences", &p.labeled, None)],
            Experiment::SyntheticHoldout | Experiment::AblationGrid | Experiment::Scaling => vec![tax, data],
            Experiment::EndToEnd => vec![filt, enc, idx, tax, post],
            Experiment::Robustness => {
                let mut v = vec![enc, tax, data];
                if p.postings.exists() && p.index.exists() && p.filter.exists() {
                    v.extend([filt, idx, post]);
                }
                v
            }
        };
        let names: Vec<&'static str> = inputs.iter().map(|i| i.name).collect();
        let dir = p.reports.join(experiment.as_str());
        let report_json = dir.join("report.json");
        let metrics_csv = dir.join("metrics.csv");
        let ecfg = self.cfg.experiment_config();
        let stage = format!("evaluate:{experiment}");
        let params = serde_json::to_value(&ecfg)?;
        let input_keys: Vec<(String, PathBuf)> = inputs.iter().map(|i| (i.name.to_string(), i.path.to_path_buf())).collect();
        self.run_stage(&stage, &inputs, &[&report_json, &metrics_csv], params, |_| {
            let has = |n: &str| names.contains(&n);
            let taxonomy = has("taxonomy").then(|| load_taxonomy(&p.taxonomy)).transpose()?;
            let dataset = has("dataset").then(|| SyntheticDataset::load_jsonl(&p.dataset)).transpose()?;
            let encoder = has("encoder checkpoint").then(|| BiEncoderModel::load(&p.encoder)).transpose()?;
            let filter = has("filter checkpoint").then(|| FilterModel::load(&p.filter)).transpose()?;
            let index = has("skill index").then(|| load_index(&p.index)).transpose()?;
            let postings = has("annotated postings").then(|| load_gold_postings(&p.postings)).transpose()?;
            let labeled = has("labeled sentences").then(|| load_labeled(&p.labeled)).transpose()?;
            let inputs = ExperimentInputs {
                taxonomy: taxonomy.as_ref(),
                dataset: dataset.as_ref(),
                encoder: encoder.as_ref(),
                filter: filter.as_ref(),
                index: index.as_ref(),
                postings: postings.as_deref(),
                labeled: labeled.as_deref(),
            };
            let mut report = run_experiment(experiment, &ecfg, &inputs)?;
            for (name, path) in &input_keys {
                report.provenance.fingerprints.insert(format!("file:{name}"), hash_file(path)?);
            }
            report.write(&dir)?;
            for row in &report.metrics {
                match row.k {
                    Some(k) => println!("{experiment}: {}@{k} = {:.4}", row.metric, row.value),
                    None => println!("{experiment}: {} = {:.4}", row.metric, row.value),
                }
            }
            Ok(())
        })
    }

    /// Runs every stage in dependency order. γ tuning, prediction and
    /// evaluation run when their inputs are configured and present.
    pub fn run_all(&mut self) -> Result<()> {
        self.generate()?;
        self.dedup()?;
        self.train_filter()?;
        self.train_encoder()?;
        self.build_index()?;
        let p = self.cfg.paths.clone();
        if p.dev_postings.exists() {
            self.tune_gamma()?;
        } else {
            println!("tune-gamma: no dev postings at {}, skipped", p.dev_postings.display());
        }
        if p.postings.exists() && p.gamma.exists() {
            self.predict(None, None, None)?;
        } else {
            println!("predict: needs {} and a tuned gamma, skipped", p.postings.display());
        }
        let experiments = self.cfg.evaluate.experiments.clone();
        for e in experiments {
            self.evaluate_one(e)?;
        }
        Ok(())
    }
}

fn load_models(filter: &Path, encoder: &Path, index: &Path) -> Result<(FilterModel, BiEncoderModel, SkillIndex)> {
    let f = FilterModel::load(filter).with_context(|| format!("loading {}", filter.display()))?;
    let m = BiEncoderModel::load(encoder).with_context(|| format!("loading {}", encoder.display()))?;
    let i = load_index(index).with_context(|| format!("loading {}", index.display()))?;
    if i.fingerprint() != &m.fingerprint()? {
        return Err(anyhow!(
            "index {} was built by a different encoder than {}; rerun build-index",
            index.display(),
            encoder.display()
        ));
    }
    Ok((f, m, i))
}

pub fn read_gamma(path: &Path) -> Result<GammaFile> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads a taxonomy for callers outside the stage machinery.
pub fn taxonomy(path: &Path) -> Result<SkillTaxonomy> {
    Ok(load_taxonomy(path)?)
}
