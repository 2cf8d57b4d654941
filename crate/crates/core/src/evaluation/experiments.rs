use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{EvaluationReport, Experiment};
use super::{
    auprc, bm25_baseline, confusion_metrics, f1_at_k, inject_noise, mean_average_precision, mrr,
    precision_at_k, recall_at_k, tfidf_baseline, ConfusionMatrix, GoldPosting, RankedLists, RankedResult,
};
use crate::encoder::{BiEncoderModel, EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::filter::{keyword_baseline, segment_posting, FilterModel, LabeledSentence, DEFAULT_LEXICON};
use crate::index::{
    build_index, default_gamma_grid, predict_postings, tune_gamma_on_postings, RetrievalParams, SkillIndex,
};
use crate::io::sha256_hex;
use crate::syngen::{SyntheticDataset, SyntheticSample};
use crate::taxonomy::SkillTaxonomy;
use crate::trainer::{train_with_validation, TrainConfig, TrainingHistory};

/// The three compared encoders. All share the BiLSTM; A pools the first
/// token, B and C use attention, and only C trains on multi-skill samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    ModelA,
    ModelB,
    ModelC,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::ModelA => "model_a",
            ModelVariant::ModelB => "model_b",
            ModelVariant::ModelC => "model_c",
        }
    }

    pub fn encoder_config(self, base: &EncoderConfig) -> EncoderConfig {
        EncoderConfig {
            bilstm: true,
            pooling: match self {
                ModelVariant::ModelA => Pooling::FirstToken,
                _ => Pooling::Attention,
            },
            ..base.clone()
        }
    }

    pub fn multi_label(self) -> bool {
        self == ModelVariant::ModelC
    }

    /// Positive samples this variant trains on.
    pub fn training_samples(self, samples: &[SyntheticSample]) -> Vec<SyntheticSample> {
        samples
            .iter()
            .filter(|s| match s.skill_ids.len() {
                0 => false,
                1 => true,
                _ => self.multi_label(),
            })
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Cut-offs for sentence-level recall.
    pub recall_ks: Vec<usize>,
    /// Cut-offs for posting-level precision, recall and F1.
    pub posting_ks: Vec<usize>,
    pub models: Vec<ModelVariant>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalParams,
    pub gamma_grid: Vec<f64>,
    /// Share of annotated postings used to tune γ; the rest is the test set.
    pub dev_fraction: f64,
    pub noise_rates: Vec<f64>,
    pub scaling_sizes: Vec<usize>,
    pub ablation_margins: Vec<f64>,
    pub ablation_negatives: Vec<usize>,
    /// Overrides the filter's stored threshold.
    pub tau: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            holdout_fraction: 0.2,
            recall_ks: vec![1, 5, 10],
            posting_ks: vec![1, 3, 5],
            models: vec![ModelVariant::ModelA, ModelVariant::ModelB, ModelVariant::ModelC],
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalParams::default(),
            gamma_grid: default_gamma_grid(),
            dev_fraction: 0.5,
            noise_rates: vec![0.0, 0.1, 0.2],
            scaling_sizes: vec![1_000, 5_000, 10_000],
            ablation_margins: vec![0.3, 0.5, 0.7],
            ablation_negatives: vec![1, 5, 10],
            tau: None,
        }
    }
}

/// Artifacts an experiment may read. Each protocol names the ones it needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExperimentInputs<'a> {
    pub taxonomy: Option<&'a SkillTaxonomy>,
    pub dataset: Option<&'a SyntheticDataset>,
    pub encoder: Option<&'a BiEncoderModel>,
    pub filter: Option<&'a FilterModel>,
    pub index: Option<&'a SkillIndex>,
    pub postings: Option<&'a [GoldPosting]>,
    pub labeled: Option<&'a [LabeledSentence]>,
}

fn need<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::MissingArtifact(name.to_string()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shuffles `0..n` with `seed` and returns `(kept, held_out)`, each in
/// ascending order. At least one index lands on each side.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} is not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two items to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut out = order.split_off(n - held);
    order.sort_unstable();
    out.sort_unstable();
    Ok((order, out))
}

/// The seeded train / hold-out split of synthetic samples.
pub fn holdout_split(
    samples: &[SyntheticSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
    let (a, b) = split_indices(samples.len(), fraction, seed)?;
    Ok((
        a.into_iter().map(|i| samples[i].clone()).collect(),
        b.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}

fn positives(samples: &[SyntheticSample]) -> Vec<SyntheticSample> {
    samples.iter().filter(|s| !s.skill_ids.is_empty()).cloned().collect()
}

/// Trains one variant from a fresh initialization.
pub fn train_variant(
    variant: ModelVariant,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    tax: &SkillTaxonomy,
    samples: &[SyntheticSample],
    validation: &[SyntheticSample],
) -> Result<(BiEncoderModel, TrainingHistory)> {
    let model = BiEncoderModel::new(variant.encoder_config(encoder))?;
    let data = SyntheticDataset::new(variant.training_samples(samples));
    train_with_validation(model, &data, validation, tax, train)
}

/// Ranks every skill for every positive sample.
///
/// A text the encoder cannot tokenize (e.g. corrupted down to nothing)
/// yields an empty ranking rather than an error.
pub fn rank_all(model: &BiEncoderModel, tax: &SkillTaxonomy, samples: &[SyntheticSample]) -> Result<Vec<RankedResult>> {
    let index = build_index(model, tax)?;
    let all = RetrievalParams {
        budget: index.len(),
        gamma: f64::NEG_INFINITY,
    };
    positives(samples)
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ranked = match model.embed(&s.text) {
                Ok(e) => index.query(&e, &all)?.into_iter().map(|(id, _)| id).collect(),
                Err(Error::Encoding(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            Ok(RankedResult::new(format!("q{i}"), ranked, s.skill_ids.iter().cloned()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexicalBaseline {
    Tfidf,
    Bm25,
}

impl LexicalBaseline {
    pub fn as_str(self) -> &'static str {
        match self {
            LexicalBaseline::Tfidf => "tfidf",
            LexicalBaseline::Bm25 => "bm25",
        }
    }

    pub fn rank(self, sentences: &[String], tax: &SkillTaxonomy, k: usize) -> Result<RankedLists> {
        let skills: Vec<(String, String)> = tax
            .skills()
            .iter()
            .map(|s| (s.skill_id.clone(), s.description.clone()))
            .collect();
        match self {
            LexicalBaseline::Tfidf => tfidf_baseline(sentences, &skills, k),
            LexicalBaseline::Bm25 => bm25_baseline(sentences, &skills, k),
        }
    }
}

/// Lexical ranking of every skill for every positive sample.
pub fn lexical_rank_all(
    baseline: LexicalBaseline,
    tax: &SkillTaxonomy,
    samples: &[SyntheticSample],
) -> Result<Vec<RankedResult>> {
    let pos = positives(samples);
    let texts: Vec<String> = pos.iter().map(|s| s.text.clone()).collect();
    let lists = baseline.rank(&texts, tax, tax.len())?;
    Ok(pos
        .iter()
        .zip(lists)
        .enumerate()
        .map(|(i, (s, l))| {
            RankedResult::new(format!("q{i}"), l.into_iter().map(|(id, _)| id).collect(), s.skill_ids.iter().cloned())
        })
        .collect())
}

fn push_ranking(report: &mut EvaluationReport, prefix: &str, results: &[RankedResult], ks: &[usize]) -> Result<()> {
    report.push(format!("{prefix}/mrr"), None, mrr(results)?)?;
    for &k in ks {
        report.push(format!("{prefix}/recall"), Some(k), recall_at_k(results, k)?)?;
    }
    report.push(format!("{prefix}/map"), None, mean_average_precision(results)?)
}

fn push_posting(report: &mut EvaluationReport, prefix: &str, results: &[RankedResult], ks: &[usize]) -> Result<()> {
    for &k in ks {
        report.push(format!("{prefix}/precision"), Some(k), precision_at_k(results, k)?)?;
        report.push(format!("{prefix}/recall"), Some(k), recall_at_k(results, k)?)?;
        report.push(format!("{prefix}/f1"), Some(k), f1_at_k(results, k)?)?;
    }
    Ok(())
}

fn mean_throughput(h: &TrainingHistory) -> f64 {
    if h.epochs.is_empty() {
        return 0.0;
    }
    h.epochs.iter().map(|e| e.samples_per_sec).sum::<f64>() / h.epochs.len() as f64
}

/// Runs one experiment protocol and returns its report.
pub fn run_experiment(
    experiment: Experiment,
    config: &ExperimentConfig,
    inputs: &ExperimentInputs<'_>,
) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new(experiment, config.seed);
    if let Some(m) = inputs.encoder {
        report.provenance.fingerprints.insert("encoder".into(), hex(&m.fingerprint()?));
    }
    if let Some(i) = inputs.index {
        report.provenance.fingerprints.insert("index".into(), hex(&sha256_bytes_of(i)));
    }
    if let Some(f) = inputs.filter {
        report
            .provenance
            .fingerprints
            .insert("filter".into(), sha256_hex(&f.to_checkpoint()?.to_bytes()?));
    }
    match experiment {
        Experiment::FilterEval => filter_eval(config, inputs, &mut report)?,
        Experiment::SyntheticHoldout => synthetic_holdout(config, inputs, &mut report)?,
        Experiment::AblationGrid => ablation_grid(config, inputs, &mut report)?,
        Experiment::EndToEnd => end_to_end(config, inputs, &mut report)?,
        Experiment::Robustness => robustness(config, inputs, &mut report)?,
        Experiment::Scaling => scaling(config, inputs, &mut report)?,
    }
    Ok(report)
}

fn sha256_bytes_of(index: &SkillIndex) -> [u8; 32] {
    crate::io::sha256_bytes(&index.to_bytes())
}

fn filter_eval(config: &ExperimentConfig, inputs: &ExperimentInputs<'_>, report: &mut EvaluationReport) -> Result<()> {
    let filter = need(inputs.filter, "filter checkpoint")?;
    let labeled = need(inputs.labeled, "labeled filter sentences")?;
    let tau = config.tau.unwrap_or(filter.threshold());
    let texts: Vec<&str> = labeled.iter().map(|l| l.text.as_str()).collect();
    let labels: Vec<bool> = labeled.iter().map(|l| l.label).collect();

    let start = Instant::now();
    let scores = filter.scores(&texts);
    let filter_secs = start.elapsed().as_secs_f64();
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= tau).collect();
    let start = Instant::now();
    let keyword = keyword_baseline(&texts, DEFAULT_LEXICON);
    let keyword_secs = start.elapsed().as_secs_f64();

    for (name, pred, sc) in [
        ("filter", predicted, scores),
        ("keyword", keyword.clone(), keyword.iter().map(|&k| f64::from(u8::from(k))).collect()),
    ] {
        let cm = ConfusionMatrix::from_predictions(&pred, &labels);
        let m = confusion_metrics(&cm)?;
        report.push(format!("{name}/accuracy"), None, m.accuracy)?;
        report.push(format!("{name}/precision"), None, m.precision)?;
        report.push(format!("{name}/recall"), None, m.recall)?;
        report.push(format!("{name}/f1"), None, m.f1)?;
        report.push(format!("{name}/auprc"), None, auprc(&sc, &labels)?)?;
        report.param(&format!("{name}_confusion"), cm)?;
    }
    let n = labeled.len().max(1) as f64;
    report.time("filter/seconds_per_sentence", filter_secs / n);
    report.time("keyword/seconds_per_sentence", keyword_secs / n);
    report.param("tau", tau)?;
    report.param("n_sentences", labeled.len())
}

fn synthetic_holdout(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs<'_>,
    report: &mut EvaluationReport,
) -> Result<()> {
    let tax = need(inputs.taxonomy, "taxonomy")?;
    let data = need(inputs.dataset, "synthetic dataset")?;
    let (train, test) = holdout_split(&data.samples, config.holdout_fraction, config.seed)?;
    if positives(&test).is_empty() {
        return Err(Error::invalid("hold-out split has no positive samples"));
    }
    let validation = positives(&test);
    for &variant in &config.models {
        let name = variant.as_str();
        let start = Instant::now();
        let (model, history) = train_variant(variant, &config.encoder, &config.train, tax, &train, &validation)?;
        report.time(format!("{name}/train_seconds"), start.elapsed().as_secs_f64());
        report.time(format!("{name}/samples_per_sec"), mean_throughput(&history));
        report.param(&format!("{name}_epoch_mrr"), history.epochs.iter().map(|e| e.mrr).collect::<Vec<_>>())?;
        push_ranking(report, name, &rank_all(&model, tax, &test)?, &config.recall_ks)?;
    }
    for baseline in [LexicalBaseline::Tfidf, LexicalBaseline::Bm25] {
        push_ranking(report, baseline.as_str(), &lexical_rank_all(baseline, tax, &test)?, &config.recall_ks)?;
    }
    report.param("holdout_fraction", config.holdout_fraction)?;
    report.param("n_train", train.len())?;
    report.param("n_test_queries", validation.len())?;
    report.param("encoder", &config.encoder)?;
    report.param("train", &config.train)
}

fn ablation_grid(config: &ExperimentConfig, inputs: &ExperimentInputs<'_>, report: &mut EvaluationReport) -> Result<()> {
    let tax = need(inputs.taxonomy, "taxonomy")?;
    let data = need(inputs.dataset, "synthetic dataset")?;
    let (train, test) = holdout_split(&data.samples, config.holdout_fraction, config.seed)?;
    let base_enc = ModelVariant::ModelC.encoder_config(&config.encoder);
    let mut settings: Vec<(String, EncoderConfig, TrainConfig)> = vec![
        ("model_c".into(), base_enc.clone(), config.train.clone()),
        (
            "no_bilstm".into(),
            EncoderConfig {
                bilstm: false,
                ..base_enc.clone()
            },
            config.train.clone(),
        ),
    ];
    for pooling in [Pooling::Mean, Pooling::FirstToken] {
        settings.push((
            format!("pooling={}", pooling.as_str()),
            EncoderConfig {
                pooling,
                ..base_enc.clone()
            },
            config.train.clone(),
        ));
    }
    for &margin in &config.ablation_margins {
        settings.push((
            format!("margin={margin}"),
            base_enc.clone(),
            TrainConfig {
                margin,
                ..config.train.clone()
            },
        ));
    }
    for &negatives in &config.ablation_negatives {
        settings.push((
            format!("negatives={negatives}"),
            base_enc.clone(),
            TrainConfig {
                negatives,
                ..config.train.clone()
            },
        ));
    }

    let samples = SyntheticDataset::new(ModelVariant::ModelC.training_samples(&train));
    let mut done: Vec<(EncoderConfig, TrainConfig, Vec<RankedResult>, f64)> = Vec::new();
    for (name, enc, tc) in settings {
        let cached = done.iter().find(|(e, t, _, _)| *e == enc && *t == tc);
        let (results, throughput) = match cached {
            Some((_, _, r, s)) => (r.clone(), *s),
            None => {
                let (model, history) = train_with_validation(BiEncoderModel::new(enc.clone())?, &samples, &[], tax, &tc)?;
                let r = rank_all(&model, tax, &test)?;
                let s = mean_throughput(&history);
                done.push((enc, tc, r.clone(), s));
                (r, s)
            }
        };
        push_ranking(report, &name, &results, &config.recall_ks)?;
        report.time(format!("{name}/samples_per_sec"), throughput);
    }
    report.param("encoder", &config.encoder)?;
    report.param("train", &config.train)
}

/// Ranks a posting's skills by their best lexical score over sentences,
/// ignoring zero scores.
fn lexical_posting_rankings(
    baseline: LexicalBaseline,
    tax: &SkillTaxonomy,
    per_posting: &[Vec<String>],
    budget: usize,
) -> Result<Vec<Vec<String>>> {
    let flat: Vec<String> = per_posting.iter().flatten().cloned().collect();
    if flat.is_empty() {
        return Ok(vec![Vec::new(); per_posting.len()]);
    }
    let mut lists = baseline.rank(&flat, tax, budget)?.into_iter();
    Ok(per_posting
        .iter()
        .map(|sentences| {
            let mut best: BTreeMap<String, f64> = BTreeMap::new();
            for list in lists.by_ref().take(sentences.len()) {
                for (id, s) in list.into_iter().filter(|(_, s)| *s > 0.0) {
                    let e = best.entry(id).or_insert(s);
                    *e = e.max(s);
                }
            }
            let mut v: Vec<(String, f64)> = best.into_iter().collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.into_iter().map(|(id, _)| id).collect()
        })
        .collect())
}

fn with_gold(postings: &[GoldPosting]) -> Vec<GoldPosting> {
    let kept: Vec<GoldPosting> = postings.iter().filter(|p| !p.skill_ids.is_empty()).cloned().collect();
    if kept.len() < postings.len() {
        log::warn!("{} postings without gold skills are skipped", postings.len() - kept.len());
    }
    kept
}

fn end_to_end(config: &ExperimentConfig, inputs: &ExperimentInputs<'_>, report: &mut EvaluationReport) -> Result<()> {
    let filter = need(inputs.filter, "filter checkpoint")?;
    let encoder = need(inputs.encoder, "encoder checkpoint")?;
    let index = need(inputs.index, "skill index")?;
    let tax = need(inputs.taxonomy, "taxonomy")?;
    let postings = with_gold(need(inputs.postings, "annotated postings")?);
    if index.fingerprint() != &encoder.fingerprint()? {
        return Err(Error::Index("index was built by a different encoder".into()));
    }
    let tau = config.tau.unwrap_or(filter.threshold());
    let (test_idx, dev_idx) = split_indices(postings.len(), config.dev_fraction, config.seed)?;
    let dev: Vec<GoldPosting> = dev_idx.iter().map(|&i| postings[i].clone()).collect();
    let test: Vec<GoldPosting> = test_idx.iter().map(|&i| postings[i].clone()).collect();

    let choice = tune_gamma_on_postings(
        Some(filter),
        encoder,
        index,
        &dev,
        tau,
        config.retrieval.budget,
        &config.gamma_grid,
    )?;
    let params = RetrievalParams {
        budget: config.retrieval.budget,
        gamma: choice.gamma,
    };
    let start = Instant::now();
    let preds = predict_postings(Some(filter), encoder, index, &test, tau, &params)?;
    let secs = start.elapsed().as_secs_f64();
    let results: Vec<RankedResult> = test
        .iter()
        .zip(&preds)
        .map(|(g, p)| RankedResult::new(&g.posting_id, p.ranked(), g.skill_ids.iter().cloned()))
        .collect();
    push_posting(report, "model", &results, &config.posting_ks)?;

    let retained: Vec<Vec<String>> = test
        .iter()
        .map(|p| {
            segment_posting(&p.text)
                .into_iter()
                .filter(|s| filter.score(s) >= tau)
                .collect()
        })
        .collect();
    for baseline in [LexicalBaseline::Tfidf, LexicalBaseline::Bm25] {
        let rankings = lexical_posting_rankings(baseline, tax, &retained, config.retrieval.budget)?;
        let results: Vec<RankedResult> = test
            .iter()
            .zip(rankings)
            .map(|(g, r)| RankedResult::new(&g.posting_id, r, g.skill_ids.iter().cloned()))
            .collect();
        push_posting(report, baseline.as_str(), &results, &config.posting_ks)?;
    }

    report.time("model/latency_per_posting_seconds", secs / test.len() as f64);
    report.time("model/postings_per_sec", test.len() as f64 / secs.max(1e-9));
    report.param("tau", tau)?;
    report.param("gamma", choice.gamma)?;
    report.param("gamma_dev_f1_at_5", choice.f1_at_5)?;
    report.param("gamma_curve", &choice.curve)?;
    report.param("budget", config.retrieval.budget)?;
    report.param("ks", &config.posting_ks)?;
    report.param("n_dev", dev.len())?;
    report.param("n_test", test.len())
}

fn sorted_rates(rates: &[f64]) -> Result<Vec<f64>> {
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid("noise rates must lie in [0, 1]"));
    }
    let mut v = rates.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

fn robustness(config: &ExperimentConfig, inputs: &ExperimentInputs<'_>, report: &mut EvaluationReport) -> Result<()> {
    let encoder = need(inputs.encoder, "encoder checkpoint")?;
    let tax = need(inputs.taxonomy, "taxonomy")?;
    let data = need(inputs.dataset, "synthetic dataset")?;
    let (_, test) = holdout_split(&data.samples, config.holdout_fraction, config.seed)?;
    let test = positives(&test);
    let rates = sorted_rates(&config.noise_rates)?;
    let posting_inputs = match (inputs.filter, inputs.index, inputs.postings) {
        (Some(f), Some(i), Some(p)) => Some((f, i, with_gold(p))),
        _ => None,
    };
    for &rate in &rates {
        let label = format!("noise={rate:.2}");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let noisy: Vec<SyntheticSample> = test
            .iter()
            .map(|s| {
                Ok(SyntheticSample {
                    text: inject_noise(&s.text, rate, &mut rng)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        push_ranking(report, &format!("{label}/model"), &rank_all(encoder, tax, &noisy)?, &config.recall_ks)?;
        let lexical = lexical_rank_all(LexicalBaseline::Tfidf, tax, &noisy)?;
        push_ranking(report, &format!("{label}/tfidf"), &lexical, &config.recall_ks)?;

        if let Some((filter, index, postings)) = &posting_inputs {
            let tau = config.tau.unwrap_or(filter.threshold());
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let noisy: Vec<GoldPosting> = postings
                .iter()
                .map(|p| {
                    Ok(GoldPosting {
                        text: inject_noise(&p.text, rate, &mut rng)?,
                        ..p.clone()
                    })
                })
                .collect::<Result<_>>()?;
            let preds = predict_postings(Some(filter), encoder, index, &noisy, tau, &config.retrieval)?;
            let results: Vec<RankedResult> = noisy
                .iter()
                .zip(&preds)
                .map(|(g, p)| RankedResult::new(&g.posting_id, p.ranked(), g.skill_ids.iter().cloned()))
                .collect();
            push_posting(report, &format!("{label}/posting"), &results, &config.posting_ks)?;
        }
    }
    report.param("rates", &rates)?;
    report.param("n_queries", test.len())?;
    report.param("retrieval", config.retrieval)
}

fn scaling(config: &ExperimentConfig, inputs: &ExperimentInputs<'_>, report: &mut EvaluationReport) -> Result<()> {
    let tax = need(inputs.taxonomy, "taxonomy")?;
    let data = need(inputs.dataset, "synthetic dataset")?;
    let (train, test) = holdout_split(&data.samples, config.holdout_fraction, config.seed)?;
    let mut pool = ModelVariant::ModelC.training_samples(&train);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut sizes = config.scaling_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let queries = positives(&test).len().max(1) as f64;
    let mut actual = BTreeMap::new();
    for size in sizes {
        let n = size.min(pool.len());
        if n < size {
            log::warn!("scaling size {size} exceeds the {} available training samples", pool.len());
        }
        actual.insert(size.to_string(), n);
        let label = format!("n={size}");
        let start = Instant::now();
        let (model, history) = train_variant(
            ModelVariant::ModelC,
            &config.encoder,
            &config.train,
            tax,
            &pool[..n],
            &[],
        )?;
        report.time(format!("{label}/train_seconds"), start.elapsed().as_secs_f64());
        report.time(format!("{label}/samples_per_sec"), mean_throughput(&history));
        let start = Instant::now();
        let results = rank_all(&model, tax, &test)?;
        report.time(format!("{label}/query_latency_seconds"), start.elapsed().as_secs_f64() / queries);
        report.push(format!("{label}/mrr"), None, mrr(&results)?)?;
        for &k in &config.recall_ks {
            report.push(format!("{label}/recall"), Some(k), recall_at_k(&results, k)?)?;
        }
    }
    report.param("training_samples", actual)?;
    report.param("encoder", &config.encoder)?;
    report.param("train", &config.train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{train_filter, FilterConfig};
    use crate::syngen::{build_dataset, BuildConfig, StubClient, VariantCounts};
    use crate::text::CharNgramEmbedder;
    use crate::toy::toy_taxonomy;

    fn tiny_setup() -> (SkillTaxonomy, SyntheticDataset, ExperimentConfig) {
        let tax = toy_taxonomy(12, 3, 2).unwrap();
        let cfg = BuildConfig {
            counts: VariantCounts {
                single_per_skill: 4,
                multi_constrained_pairs: 6,
                none_total: 20,
                ..VariantCounts::default()
            },
            ..BuildConfig::default()
        };
        let (data, _) = build_dataset(&tax, &StubClient::new(1), &cfg, &CharNgramEmbedder::default()).unwrap();
        let exp = ExperimentConfig {
            encoder: EncoderConfig {
                hidden_size: 8,
                lstm_hidden: 4,
                attention_dim: 4,
                embed_dim: 8,
                vocab_buckets: 256,
                ..EncoderConfig::toy()
            },
            train: TrainConfig {
                epochs: 1,
                negatives: 3,
                ..TrainConfig::toy()
            },
            models: vec![ModelVariant::ModelC],
            scaling_sizes: vec![10, 20],
            ablation_margins: vec![0.5],
            ablation_negatives: vec![1],
            ..ExperimentConfig::default()
        };
        (tax, data, exp)
    }

    #[test]
    fn split_is_seeded_disjoint_and_covering() {
        let (a, b) = split_indices(10, 0.2, 42).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.2, 42).unwrap(), (a, b.clone()));
        assert_ne!(split_indices(10, 0.2, 43).unwrap().1, b);
        assert!(split_indices(1, 0.2, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
    }

    #[test]
    fn variants() {
        let base = EncoderConfig {
            pooling: Pooling::Mean,
            bilstm: false,
            ..EncoderConfig::toy()
        };
        assert_eq!(ModelVariant::ModelA.encoder_config(&base).pooling, Pooling::FirstToken);
        assert!(ModelVariant::ModelB.encoder_config(&base).bilstm);
        let (_, data, _) = tiny_setup();
        let single = ModelVariant::ModelB.training_samples(&data.samples);
        let multi = ModelVariant::ModelC.training_samples(&data.samples);
        assert!(single.iter().all(|s| s.skill_ids.len() == 1));
        assert!(multi.len() > single.len());
        assert!(multi.iter().all(|s| !s.skill_ids.is_empty()));
    }

    #[test]
    fn missing_prerequisites_are_named() {
        let cfg = ExperimentConfig::default();
        let err = run_experiment(Experiment::SyntheticHoldout, &cfg, &ExperimentInputs::default()).unwrap_err();
        assert!(matches!(&err, Error::MissingArtifact(n) if n == "taxonomy"), "{err}");
        let err = run_experiment(Experiment::EndToEnd, &cfg, &ExperimentInputs::default()).unwrap_err();
        assert!(matches!(&err, Error::MissingArtifact(n) if n == "filter checkpoint"));
    }

    #[test]
    fn synthetic_holdout_schema() {
        let (tax, data, cfg) = tiny_setup();
        let inputs = ExperimentInputs {
            taxonomy: Some(&tax),
            dataset: Some(&data),
            ..Default::default()
        };
        let r = run_experiment(Experiment::SyntheticHoldout, &cfg, &inputs).unwrap();
        for prefix in ["model_c", "tfidf", "bm25"] {
            assert!(r.get(&format!("{prefix}/mrr"), None).is_some());
            assert!(r.get(&format!("{prefix}/recall"), Some(5)).is_some());
            assert!(r.get(&format!("{prefix}/recall"), Some(10)).is_some());
            assert!(r.get(&format!("{prefix}/map"), None).is_some());
        }
        assert!(r.timing.contains_key("model_c/train_seconds"));
        assert!(r.metrics.iter().all(|m| m.seed == 42 && m.experiment == "synthetic_holdout"));
    }

    #[test]
    fn robustness_rows_are_monotone_and_reproducible() {
        let (tax, data, cfg) = tiny_setup();
        let cfg = ExperimentConfig {
            noise_rates: vec![0.2, 0.0, 0.1],
            ..cfg
        };
        let model = BiEncoderModel::new(cfg.encoder.clone()).unwrap();
        let inputs = ExperimentInputs {
            taxonomy: Some(&tax),
            dataset: Some(&data),
            encoder: Some(&model),
            ..Default::default()
        };
        let a = run_experiment(Experiment::Robustness, &cfg, &inputs).unwrap();
        let b = run_experiment(Experiment::Robustness, &cfg, &inputs).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params["rates"], serde_json::json!([0.0, 0.1, 0.2]));
        let rows: Vec<&str> = a
            .metrics
            .iter()
            .filter(|m| m.metric.ends_with("/model/mrr"))
            .map(|m| m.metric.as_str())
            .collect();
        assert_eq!(rows, ["noise=0.00/model/mrr", "noise=0.10/model/mrr", "noise=0.20/model/mrr"]);
    }

    #[test]
    fn scaling_records_wall_clock_per_size() {
        let (tax, data, cfg) = tiny_setup();
        let inputs = ExperimentInputs {
            taxonomy: Some(&tax),
            dataset: Some(&data),
            ..Default::default()
        };
        let r = run_experiment(Experiment::Scaling, &cfg, &inputs).unwrap();
        for n in [10, 20] {
            assert!(r.timing[&format!("n={n}/train_seconds")] > 0.0);
            assert!(r.get(&format!("n={n}/mrr"), None).is_some());
        }
    }

    #[test]
    fn ablation_grid_covers_every_setting() {
        let (tax, data, cfg) = tiny_setup();
        let inputs = ExperimentInputs {
            taxonomy: Some(&tax),
            dataset: Some(&data),
            ..Default::default()
        };
        let r = run_experiment(Experiment::AblationGrid, &cfg, &inputs).unwrap();
        for s in ["model_c", "no_bilstm", "pooling=mean", "pooling=first_token", "margin=0.5", "negatives=1"] {
            assert!(r.get(&format!("{s}/mrr"), None).is_some(), "{s}");
        }
        // margin=0.5 repeats the base configuration and reuses its result.
        assert_eq!(r.get("margin=0.5/mrr", None), r.get("model_c/mrr", None));
    }

    #[test]
    fn filter_eval_and_end_to_end() {
        let (tax, data, cfg) = tiny_setup();
        let pos: Vec<&str> = data.samples.iter().filter(|s| !s.skill_ids.is_empty()).map(|s| s.text.as_str()).collect();
        let neg: Vec<&str> = data.d_none().iter().map(|s| s.text.as_str()).collect();
        let filter = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
        let labeled: Vec<LabeledSentence> = pos
            .iter()
            .take(10)
            .map(|t| LabeledSentence { text: t.to_string(), label: true })
            .chain(neg.iter().take(10).map(|t| LabeledSentence { text: t.to_string(), label: false }))
            .collect();
        let model = BiEncoderModel::new(cfg.encoder.clone()).unwrap();
        let index = build_index(&model, &tax).unwrap();
        let postings: Vec<GoldPosting> = (0..6)
            .map(|i| GoldPosting {
                posting_id: format!("p{i}"),
                text: format!("{}。{}", pos[i], neg[i]),
                skill_ids: data.samples.iter().find(|s| s.text == pos[i]).unwrap().skill_ids.clone(),
            })
            .collect();
        let inputs = ExperimentInputs {
            taxonomy: Some(&tax),
            dataset: Some(&data),
            encoder: Some(&model),
            filter: Some(&filter),
            index: Some(&index),
            postings: Some(&postings),
            labeled: Some(&labeled),
        };
        let r = run_experiment(Experiment::FilterEval, &cfg, &inputs).unwrap();
        for name in ["filter", "keyword"] {
            for m in ["accuracy", "precision", "recall", "f1", "auprc"] {
                assert!(r.get(&format!("{name}/{m}"), None).is_some());
            }
        }
        let r = run_experiment(Experiment::EndToEnd, &cfg, &inputs).unwrap();
        for k in [1, 3, 5] {
            for p in ["model", "tfidf", "bm25"] {
                assert!(r.get(&format!("{p}/f1"), Some(k)).is_some());
            }
        }
        let gamma = r.params["gamma"].as_f64().unwrap();
        assert!(cfg.gamma_grid.contains(&gamma));
        assert!(r.provenance.fingerprints.contains_key("encoder"));

        let other = BiEncoderModel::new(EncoderConfig { seed: 9, ..cfg.encoder.clone() }).unwrap();
        let bad = ExperimentInputs {
            encoder: Some(&other),
            ..inputs
        };
        assert!(run_experiment(Experiment::EndToEnd, &cfg, &bad).is_err());
    }
}
