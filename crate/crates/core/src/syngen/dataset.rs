//! Sample generation with retries, and assembly of the full synthetic corpus.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{CompletionRequest, LlmClient};
use super::prompt::{parse_llm_output, render_prompt};
use super::quality::{ambiguous_skills, dedup, ngram_diversity_violations, violation_drops};
use super::{DecodingParams, GenerationSpec, SyntheticDataset, SyntheticSample, Variant};
use crate::error::{Error, Result};
use crate::taxonomy::SkillTaxonomy;
use crate::text::SentenceEmbedder;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub samples: Vec<SyntheticSample>,
    /// Sentences requested but not delivered.
    pub shortfall: usize,
    pub calls: usize,
}

/// Calls the client until `spec.n_sentences` usable lines arrive or the
/// retry budget runs out. Transport errors are retried with the client's
/// backoff; short or empty answers count as under-delivery and are re-asked
/// for the remainder.
pub fn generate_samples(
    client: &dyn LlmClient,
    spec: &GenerationSpec,
    retries: u32,
) -> Result<GenerationOutcome> {
    spec.validate()?;
    let skill_ids = spec.skill_ids();
    let mut samples: Vec<SyntheticSample> = Vec::with_capacity(spec.n_sentences);
    let mut attempt: u32 = 0;
    let mut calls = 0;
    loop {
        let need = spec.n_sentences - samples.len();
        if need == 0 {
            break;
        }
        let mut request_spec = spec.clone();
        request_spec.n_sentences = need;
        let messages = render_prompt(&request_spec);
        let request = CompletionRequest {
            messages: &messages,
            decoding: &spec.decoding,
            n_sentences: need,
            seed: spec.seed.wrapping_add(u64::from(attempt)),
        };
        calls += 1;
        match client.complete(&request) {
            Ok(raw) => {
                samples.extend(parse_llm_output(&raw).into_iter().take(need).map(|text| {
                    SyntheticSample {
                        text,
                        skill_ids: skill_ids.clone(),
                        variant: spec.variant,
                        source: client.source(),
                    }
                }));
            }
            Err(e) if attempt >= retries => {
                return Err(Error::Generation {
                    spec: spec.to_string(),
                    message: format!("giving up after {} attempt(s): {e}", attempt + 1),
                });
            }
            Err(e) => log::warn!("generation attempt {} for {spec} failed: {e}", attempt + 1),
        }
        if attempt >= retries || samples.len() >= spec.n_sentences {
            break;
        }
        attempt += 1;
        std::thread::sleep(client.backoff(attempt));
    }
    let shortfall = spec.n_sentences - samples.len();
    if shortfall > 0 {
        log::warn!("{spec}: under-delivered by {shortfall}");
    }
    Ok(GenerationOutcome {
        samples,
        shortfall,
        calls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantCounts {
    /// Sentences per skill for the single-skill partition.
    pub single_per_skill: usize,
    /// Number of same-Level-2 skill pairs.
    pub multi_constrained_pairs: usize,
    /// Number of unconstrained skill pairs.
    pub multi_random_pairs: usize,
    pub multi_per_pair: usize,
    /// Total skill-free sentences.
    pub none_total: usize,
    pub none_per_prompt: usize,
}

impl Default for VariantCounts {
    fn default() -> Self {
        Self {
            single_per_skill: 10,
            multi_constrained_pairs: 0,
            multi_random_pairs: 0,
            multi_per_pair: 3,
            none_total: 0,
            none_per_prompt: 10,
        }
    }
}

impl VariantCounts {
    pub fn zero() -> Self {
        Self {
            single_per_skill: 0,
            multi_constrained_pairs: 0,
            multi_random_pairs: 0,
            none_total: 0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcParams {
    pub dedup_cutoff: f64,
    pub ngram_n: usize,
    pub max_repeats: usize,
    /// Resample rounds allowed per label after the first request.
    pub retry_budget: u32,
    /// Transport retries per client call.
    pub client_retries: u32,
    pub ambiguity_check: bool,
    pub highsim: f64,
    pub min_neighbors: usize,
}

impl Default for QcParams {
    fn default() -> Self {
        Self {
            dedup_cutoff: 0.95,
            ngram_n: 4,
            max_repeats: 3,
            retry_budget: 3,
            client_retries: 2,
            ambiguity_check: true,
            highsim: 0.9,
            min_neighbors: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub counts: VariantCounts,
    pub decoding: DecodingParams,
    pub qc: QcParams,
    pub max_in_flight: usize,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            counts: VariantCounts::default(),
            decoding: DecodingParams::default(),
            qc: QcParams::default(),
            max_in_flight: 4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub requested: BTreeMap<String, usize>,
    pub produced: BTreeMap<String, usize>,
    pub client_calls: usize,
    pub removed_duplicates: usize,
    pub removed_diversity: usize,
    pub removed_global_duplicates: usize,
    /// Labels (skill ids joined by `+`, or `none`) that ended below target,
    /// with the missing count.
    pub under_represented: Vec<(String, usize)>,
    pub ambiguous_skills: Vec<String>,
}

impl BuildReport {
    /// Share of generated candidates removed as duplicates.
    pub fn duplicate_fraction(&self) -> f64 {
        let produced: usize = self.produced.values().sum();
        let removed = self.removed_duplicates + self.removed_global_duplicates;
        if produced + removed == 0 {
            0.0
        } else {
            removed as f64 / (produced + removed) as f64
        }
    }
}

struct Job {
    spec: GenerationSpec,
    target: usize,
    diversity: Option<(usize, usize)>,
    rounds: u32,
}

struct JobResult {
    samples: Vec<SyntheticSample>,
    calls: usize,
    removed_duplicates: usize,
    removed_diversity: usize,
}

fn run_job(
    client: &dyn LlmClient,
    job: &Job,
    embedder: &(dyn SentenceEmbedder + Sync),
    qc: &QcParams,
) -> Result<JobResult> {
    let mut pool: Vec<SyntheticSample> = Vec::new();
    let mut result = JobResult {
        samples: Vec::new(),
        calls: 0,
        removed_duplicates: 0,
        removed_diversity: 0,
    };
    for round in 0..=job.rounds {
        let need = job.target - pool.len();
        if need == 0 {
            break;
        }
        let mut spec = job.spec.clone();
        spec.n_sentences = need;
        spec.seed = job.spec.seed.wrapping_add(u64::from(round) * 1_000);
        let out = generate_samples(client, &spec, qc.client_retries)?;
        result.calls += out.calls;
        let mut candidates = std::mem::take(&mut pool);
        candidates.extend(out.samples);
        let deduped = dedup(&candidates, embedder, qc.dedup_cutoff)?;
        result.removed_duplicates += deduped.removed_count;
        pool = deduped.kept;
        if let Some((n, max_repeats)) = job.diversity {
            let texts: Vec<&str> = pool.iter().map(|s| s.text.as_str()).collect();
            let violations = ngram_diversity_violations(&texts, n, max_repeats)?;
            let drops = violation_drops(&violations, max_repeats);
            if !drops.is_empty() {
                result.removed_diversity += drops.len();
                pool = pool
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| !drops.contains(i))
                    .map(|(_, s)| s)
                    .collect();
            }
        }
    }
    result.samples = pool;
    Ok(result)
}

fn label_key(spec: &GenerationSpec) -> String {
    if spec.variant == Variant::None {
        "none".into()
    } else {
        spec.skill_ids().join("+")
    }
}

/// Generates the single, multi and skill-free partitions.
///
/// Every label gets its own resample loop: request the missing sentences,
/// drop duplicates and near-duplicates, drop sentences that break the
/// n-gram diversity rule, and repeat up to the retry budget. Requests for
/// different labels run on at most `max_in_flight` workers; results are
/// merged in job order, so the output depends only on the seed and the
/// client's answers. A final pass removes exact duplicates across labels.
pub fn build_dataset(
    tax: &SkillTaxonomy,
    client: &dyn LlmClient,
    config: &BuildConfig,
    embedder: &(dyn SentenceEmbedder + Sync),
) -> Result<(SyntheticDataset, BuildReport)> {
    config.decoding.validate()?;
    let counts = &config.counts;
    let qc = &config.qc;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = BuildReport::default();

    let ambiguous = if qc.ambiguity_check && counts.single_per_skill > 0 && !tax.is_empty() {
        ambiguous_skills(tax, embedder, qc.highsim, qc.min_neighbors)?
    } else {
        vec![false; tax.len()]
    };
    report.ambiguous_skills = tax
        .skills()
        .iter()
        .zip(&ambiguous)
        .filter(|(_, &a)| a)
        .map(|(s, _)| s.skill_id.clone())
        .collect();

    let base = |variant, skills, n, rng: &mut ChaCha8Rng| -> Result<GenerationSpec> {
        let mut spec = GenerationSpec::new(variant, skills, n)?;
        spec.decoding = config.decoding;
        spec.seed = rng.gen();
        Ok(spec)
    };
    let diversity = Some((qc.ngram_n, qc.max_repeats));

    let mut jobs = Vec::new();
    if counts.single_per_skill > 0 {
        for (skill, &amb) in tax.skills().iter().zip(&ambiguous) {
            let mut spec = base(Variant::Single, vec![skill.clone()], counts.single_per_skill, &mut rng)?;
            spec.context_anchors = amb;
            let (max_repeats, rounds) = if amb {
                ((qc.max_repeats / 2).max(1), qc.retry_budget * 2)
            } else {
                (qc.max_repeats, qc.retry_budget)
            };
            jobs.push(Job {
                spec,
                target: counts.single_per_skill,
                diversity: Some((qc.ngram_n, max_repeats)),
                rounds,
            });
        }
    }
    if counts.multi_per_pair > 0 {
        for _ in 0..counts.multi_constrained_pairs {
            let (a, b) = tax.sample_constrained_pair(&mut rng)?;
            let skills = vec![a.clone(), b.clone()];
            jobs.push(Job {
                spec: base(Variant::MultiConstrained, skills, counts.multi_per_pair, &mut rng)?,
                target: counts.multi_per_pair,
                diversity,
                rounds: qc.retry_budget,
            });
        }
        for _ in 0..counts.multi_random_pairs {
            let (a, b) = tax.sample_uniform_pair(&mut rng)?;
            let skills = vec![a.clone(), b.clone()];
            jobs.push(Job {
                spec: base(Variant::MultiRandom, skills, counts.multi_per_pair, &mut rng)?,
                target: counts.multi_per_pair,
                diversity,
                rounds: qc.retry_budget,
            });
        }
    }
    if counts.none_total > 0 {
        let per = counts.none_per_prompt.max(1);
        let mut left = counts.none_total;
        while left > 0 {
            let n = per.min(left);
            jobs.push(Job {
                spec: base(Variant::None, vec![], n, &mut rng)?,
                target: n,
                diversity: None,
                rounds: qc.retry_budget,
            });
            left -= n;
        }
    }
    for job in &jobs {
        *report
            .requested
            .entry(job.spec.variant.as_str().to_string())
            .or_default() += job.target;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<JobResult>> =
        pool.install(|| jobs.par_iter().map(|j| run_job(client, j, embedder, qc)).collect());

    let mut samples = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let res = res?;
        report.client_calls += res.calls;
        report.removed_duplicates += res.removed_duplicates;
        report.removed_diversity += res.removed_diversity;
        if res.samples.len() < job.target {
            report
                .under_represented
                .push((label_key(&job.spec), job.target - res.samples.len()));
        }
        samples.extend(res.samples);
    }

    let mut seen = HashSet::new();
    let before = samples.len();
    samples.retain(|s| seen.insert(s.text.clone()));
    report.removed_global_duplicates = before - samples.len();
    for s in &samples {
        *report.produced.entry(s.variant.as_str().to_string()).or_default() += 1;
    }
    Ok((SyntheticDataset::new(samples), report))
}
