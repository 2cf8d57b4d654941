//! Contrastive training of the bi-encoder with a margin ranking loss.
//!
//! Each positive sentence is paired with each of its gold skills, and each
//! pair is contrasted against `K` skills drawn uniformly from outside the
//! sentence's gold set. Negatives are redrawn every epoch.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{BiEncoderModel, Embedding, ForwardTrace};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::syngen::{SyntheticDataset, SyntheticSample};
use crate::taxonomy::SkillTaxonomy;
use crate::text::dot;

/// Texts per gradient chunk. Fixed so the reduction order, and therefore
/// the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Margin λ.
    pub margin: f64,
    /// Negatives per positive pair.
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Recompute skill embeddings every this many batches. Between refreshes
    /// cached skill embeddings are used and receive no gradient.
    pub skill_refresh_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            negatives: 5,
            learning_rate: 2e-5,
            batch_size: 32,
            epochs: 10,
            seed: 42,
            optimizer: Optimizer::Sgd,
            skill_refresh_interval: 1,
        }
    }
}

impl TrainConfig {
    /// Settings that converge in a few epochs on the toy taxonomy.
    pub fn toy() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 16,
            epochs: 20,
            optimizer: Optimizer::Adam,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::invalid("margin must be non-negative"));
        }
        if self.negatives == 0 {
            return Err(Error::invalid("negatives must be at least 1"));
        }
        if self.batch_size == 0 || self.skill_refresh_interval == 0 {
            return Err(Error::invalid("batch_size and skill_refresh_interval must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Validation MRR, NaN when no validation set was given.
    pub mrr: f64,
    pub seconds: f64,
    pub samples_per_sec: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r)?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "loss", "mrr", "seconds", "samples_per_sec"])?;
        }
        w.into_inner()
            .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv_bytes()?)
    }
}

/// `K` distinct skill indices drawn uniformly from those not in `exclude`.
fn sample_negative_indices<R: Rng + ?Sized>(
    n_skills: usize,
    exclude: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut excluded = exclude.to_vec();
    excluded.sort_unstable();
    excluded.dedup();
    let eligible = n_skills - excluded.len();
    if k > eligible {
        return Err(Error::Sampling(format!(
            "cannot draw {k} negatives from {eligible} eligible skills"
        )));
    }
    if 2 * k <= eligible {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let i = rng.gen_range(0..n_skills);
            if excluded.binary_search(&i).is_err() && !out.contains(&i) {
                out.push(i);
            }
        }
        return Ok(out);
    }
    let pool: Vec<usize> = (0..n_skills)
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    Ok(pool.choose_multiple(rng, k).copied().collect())
}

/// Draws `k` distinct negative skill ids outside `positives`.
pub fn sample_negatives<R: Rng + ?Sized>(
    tax: &SkillTaxonomy,
    positives: &[String],
    k: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    let exclude = positives
        .iter()
        .map(|id| {
            tax.index_of(id)
                .ok_or_else(|| Error::Sampling(format!("unknown skill id {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_negative_indices(tax.len(), &exclude, k, rng)?
        .into_iter()
        .map(|i| tax.skills()[i].skill_id.clone())
        .collect())
}

fn hinge_mean(sim_pos: f64, sims_neg: &[f64], margin: f64) -> Result<f64> {
    if sims_neg.is_empty() {
        return Err(Error::invalid("margin loss needs at least one negative"));
    }
    let total: f64 = sims_neg
        .iter()
        .map(|s| (margin - sim_pos + s).max(0.0))
        .sum();
    Ok(total / sims_neg.len() as f64)
}

/// Mean over negatives of `max(0, λ − sim(t, s⁺) + sim(t, s⁻))`.
pub fn margin_loss(e_t: &Embedding, e_pos: &Embedding, e_negs: &[Embedding], margin: f64) -> Result<f64> {
    let sims: Vec<f64> = e_negs.iter().map(|n| e_t.sim(n)).collect();
    hinge_mean(e_t.sim(e_pos), &sims, margin)
}

/// Margin loss averaged over the sentence's positives.
pub fn multi_label_loss(
    e_t: &Embedding,
    positives: &[Embedding],
    negatives_per_positive: &[Vec<Embedding>],
    margin: f64,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::invalid("multi-label loss needs at least one positive"));
    }
    if positives.len() != negatives_per_positive.len() {
        return Err(Error::invalid("one negative list per positive is required"));
    }
    let mut total = 0.0;
    for (p, negs) in positives.iter().zip(negatives_per_positive) {
        total += margin_loss(e_t, p, negs, margin)?;
    }
    Ok(total / positives.len() as f64)
}

/// A training example resolved to taxonomy indices.
#[derive(Debug, Clone)]
struct Example {
    text: String,
    positives: Vec<usize>,
}

fn resolve(tax: &SkillTaxonomy, samples: &[SyntheticSample]) -> Result<Vec<Example>> {
    samples
        .iter()
        .filter(|s| !s.skill_ids.is_empty())
        .map(|s| {
            let positives = s
                .skill_ids
                .iter()
                .map(|id| {
                    tax.index_of(id).ok_or_else(|| {
                        Error::Training(format!("sample references unknown skill {id}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                text: s.text.clone(),
                positives,
            })
        })
        .collect()
}

struct BatchItem<'e> {
    text: &'e str,
    positives: &'e [usize],
    /// One list of negative skill indices per positive.
    negatives: Vec<Vec<usize>>,
}

/// Mean batch loss and its gradient with respect to every parameter.
///
/// With `cache`, skill embeddings come from (and are added to) the cache and
/// the skill side receives no gradient.
fn loss_and_grad(
    model: &BiEncoderModel,
    tax: &SkillTaxonomy,
    batch: &[BatchItem<'_>],
    margin: f64,
    cache: Option<&mut BTreeMap<usize, Embedding>>,
) -> Result<(f64, Vec<f64>)> {
    let mut skill_slot: BTreeMap<usize, usize> = BTreeMap::new();
    for item in batch {
        for &s in item.positives.iter().chain(item.negatives.iter().flatten()) {
            let next = skill_slot.len();
            skill_slot.entry(s).or_insert(next);
        }
    }
    let mut skill_order = vec![0; skill_slot.len()];
    for (&s, &slot) in &skill_slot {
        skill_order[slot] = s;
    }

    let sentence_traces: Vec<ForwardTrace> = batch
        .par_iter()
        .map(|item| model.forward(item.text))
        .collect::<Result<_>>()?;
    let describe = |s: usize| tax.skills()[s].description.as_str();
    let (skill_traces, cached): (Vec<ForwardTrace>, Vec<Embedding>) = match cache {
        None => (
            skill_order
                .par_iter()
                .map(|&s| model.forward(describe(s)))
                .collect::<Result<_>>()?,
            Vec::new(),
        ),
        Some(cache) => {
            let missing: Vec<usize> = skill_order
                .iter()
                .copied()
                .filter(|s| !cache.contains_key(s))
                .collect();
            let fresh: Vec<Embedding> = missing
                .par_iter()
                .map(|&s| model.embed(describe(s)))
                .collect::<Result<_>>()?;
            cache.extend(missing.into_iter().zip(fresh));
            (Vec::new(), skill_order.iter().map(|s| cache[s].clone()).collect())
        }
    };
    let skill_emb: Vec<&[f64]> = if skill_traces.is_empty() {
        cached.iter().map(|e| e.as_slice()).collect()
    } else {
        skill_traces.iter().map(|t| t.embedding.as_slice()).collect()
    };

    let d = model.config().embed_dim;
    let bsz = batch.len() as f64;
    let mut d_sent = vec![vec![0.0; d]; batch.len()];
    let mut d_skill = vec![vec![0.0; d]; skill_order.len()];
    let mut loss = 0.0;
    for (i, item) in batch.iter().enumerate() {
        let e_t = sentence_traces[i].embedding.as_slice();
        for (p, negs) in item.positives.iter().zip(&item.negatives) {
            let w = 1.0 / (bsz * item.positives.len() as f64 * negs.len() as f64);
            let ps = skill_slot[p];
            let sim_pos = dot(e_t, skill_emb[ps]);
            for n in negs {
                let ns = skill_slot[n];
                let h = margin - sim_pos + dot(e_t, skill_emb[ns]);
                if h <= 0.0 {
                    continue;
                }
                loss += w * h;
                for j in 0..d {
                    d_sent[i][j] += w * (skill_emb[ns][j] - skill_emb[ps][j]);
                    d_skill[ps][j] -= w * e_t[j];
                    d_skill[ns][j] += w * e_t[j];
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss is {loss}")));
    }

    let mut jobs: Vec<(&ForwardTrace, &[f64])> = sentence_traces
        .iter()
        .zip(&d_sent)
        .map(|(t, g)| (t, g.as_slice()))
        .collect();
    jobs.extend(skill_traces.iter().zip(&d_skill).map(|(t, g)| (t, g.as_slice())));
    let n = model.param_count();
    let partials: Vec<Vec<f64>> = jobs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            for (t, de) in chunk {
                model.backward(t, de, &mut g);
            }
            g
        })
        .collect();
    let mut grads = vec![0.0; n];
    for p in &partials {
        grads.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("gradient is not finite".into()));
    }
    Ok((loss, grads))
}

/// A sentence with its gold skills and, per gold skill, fixed negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveExample {
    pub text: String,
    pub positives: Vec<String>,
    pub negatives: Vec<Vec<String>>,
}

/// Mean multi-label margin loss over `batch` and its exact gradient with
/// respect to the flat parameter vector of `model`.
pub fn batch_loss_and_gradient(
    model: &BiEncoderModel,
    tax: &SkillTaxonomy,
    batch: &[ContrastiveExample],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let idx = |id: &String| {
        tax.index_of(id)
            .ok_or_else(|| Error::invalid(format!("unknown skill id {id}")))
    };
    let resolved = batch
        .iter()
        .map(|ex| {
            if ex.positives.is_empty() || ex.positives.len() != ex.negatives.len() {
                return Err(Error::invalid("need one negative list per positive"));
            }
            if ex.negatives.iter().any(|n| n.is_empty()) {
                return Err(Error::invalid("every positive needs at least one negative"));
            }
            let positives = ex.positives.iter().map(idx).collect::<Result<Vec<_>>>()?;
            let negatives = ex
                .negatives
                .iter()
                .map(|n| n.iter().map(idx).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            Ok((positives, negatives))
        })
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<BatchItem<'_>> = batch
        .iter()
        .zip(&resolved)
        .map(|(ex, (p, n))| BatchItem {
            text: &ex.text,
            positives: p,
            negatives: n.clone(),
        })
        .collect();
    loss_and_grad(model, tax, &items, margin, None)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam => (vec![0.0; n], vec![0.0; n]),
        };
        Self { kind, lr, m, v, t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], frozen: Option<std::ops::Range<usize>>) {
        let skip = |i: usize| frozen.as_ref().is_some_and(|r| r.contains(&i));
        match self.kind {
            Optimizer::Sgd => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    if !skip(i) {
                        *p -= self.lr * g;
                    }
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    if skip(i) {
                        continue;
                    }
                    let g = grads[i];
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Mutable training state shared by [`train`] and [`measure_throughput`].
struct Trainer<'a> {
    model: BiEncoderModel,
    tax: &'a SkillTaxonomy,
    config: TrainConfig,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    cached_skills: BTreeMap<usize, Embedding>,
    batches_done: usize,
}

impl<'a> Trainer<'a> {
    fn new(model: BiEncoderModel, tax: &'a SkillTaxonomy, config: &TrainConfig) -> Self {
        let n = model.param_count();
        Self {
            opt: OptimizerState::new(config.optimizer, config.learning_rate, n),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            tax,
            config: config.clone(),
            cached_skills: BTreeMap::new(),
            batches_done: 0,
        }
    }

    /// One gradient step; returns the mean batch loss.
    fn step(&mut self, batch: &[&Example]) -> Result<f64> {
        let k = self.config.negatives;
        let mut items = Vec::with_capacity(batch.len());
        for ex in batch {
            let negatives = ex
                .positives
                .iter()
                .map(|_| sample_negative_indices(self.tax.len(), &ex.positives, k, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            items.push(BatchItem {
                text: &ex.text,
                positives: &ex.positives,
                negatives,
            });
        }
        let refresh = self.batches_done.is_multiple_of(self.config.skill_refresh_interval);
        if refresh {
            self.cached_skills.clear();
        }
        let cache = (!refresh).then_some(&mut self.cached_skills);
        let (loss, grads) = loss_and_grad(&self.model, self.tax, &items, self.config.margin, cache)?;
        let frozen = self.model.frozen_range();
        self.opt.step(self.model.params_mut(), &grads, frozen);
        self.batches_done += 1;
        Ok(loss)
    }

    fn shuffled<'e>(&mut self, examples: &'e [Example]) -> Vec<&'e Example> {
        let mut order: Vec<&Example> = examples.iter().collect();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Mean reciprocal rank of the best-ranked gold skill over validation samples.
pub fn validation_mrr(model: &BiEncoderModel, tax: &SkillTaxonomy, samples: &[SyntheticSample]) -> Result<f64> {
    let examples = resolve(tax, samples)?;
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let descriptions: Vec<&str> = tax.skills().iter().map(|s| s.description.as_str()).collect();
    let skills = model.embed_batch(&descriptions)?;
    let rr: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let e = model.embed(&ex.text)?;
            let sims: Vec<f64> = skills.iter().map(|s| e.sim(s)).collect();
            let best = ex
                .positives
                .iter()
                .map(|&p| {
                    sims.iter()
                        .enumerate()
                        .filter(|&(j, &s)| s > sims[p] || (s == sims[p] && j < p))
                        .count()
                })
                .min()
                .unwrap_or(usize::MAX);
            Ok(1.0 / (best + 1) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(rr.iter().sum::<f64>() / rr.len() as f64)
}

/// Trains on the positive samples of `dataset`.
pub fn train(
    model: BiEncoderModel,
    dataset: &SyntheticDataset,
    tax: &SkillTaxonomy,
    config: &TrainConfig,
) -> Result<(BiEncoderModel, TrainingHistory)> {
    train_with_validation(model, dataset, &[], tax, config)
}

/// Like [`train`], also recording validation MRR after every epoch.
pub fn train_with_validation(
    model: BiEncoderModel,
    dataset: &SyntheticDataset,
    validation: &[SyntheticSample],
    tax: &SkillTaxonomy,
    config: &TrainConfig,
) -> Result<(BiEncoderModel, TrainingHistory)> {
    config.validate()?;
    let mut history = TrainingHistory::default();
    if config.epochs == 0 {
        return Ok((model, history));
    }
    let examples = resolve(tax, &dataset.samples)?;
    if examples.is_empty() {
        return Err(Error::Training("dataset has no positive samples".into()));
    }
    let mut trainer = Trainer::new(model, tax, config);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let order = trainer.shuffled(&examples);
        let mut total = 0.0;
        let n_batches = order.len().div_ceil(config.batch_size);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let loss = trainer.step(batch).map_err(|e| match e {
                Error::Training(_) | Error::DegenerateEmbedding(_) => {
                    Error::Training(format!("epoch {epoch}, batch {}: {e}", b + 1))
                }
                other => other,
            })?;
            total += loss;
        }
        let seconds = start.elapsed().as_secs_f64();
        let mrr = if validation.is_empty() {
            f64::NAN
        } else {
            validation_mrr(&trainer.model, tax, validation)?
        };
        let record = EpochRecord {
            epoch,
            loss: total / n_batches as f64,
            mrr,
            seconds,
            samples_per_sec: examples.len() as f64 / seconds.max(1e-9),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} mrr {:.4} ({:.1} samples/s)",
            record.loss,
            record.mrr,
            record.samples_per_sec
        );
        history.epochs.push(record);
    }
    let mut model = trainer.model;
    model.round_to_f32();
    Ok((model, history))
}

/// Training samples per second over a timed window, after one untimed
/// warm-up batch. The model passed in is not modified.
pub fn measure_throughput(
    model: &BiEncoderModel,
    dataset: &SyntheticDataset,
    tax: &SkillTaxonomy,
    config: &TrainConfig,
    duration: Duration,
) -> Result<f64> {
    if duration.is_zero() {
        return Err(Error::invalid("throughput window must be longer than zero"));
    }
    config.validate()?;
    let examples = resolve(tax, &dataset.samples)?;
    if examples.is_empty() {
        return Err(Error::Training("dataset has no positive samples".into()));
    }
    let mut trainer = Trainer::new(model.clone(), tax, config);
    let mut order = trainer.shuffled(&examples);
    let batch_size = config.batch_size.min(order.len());
    trainer.step(&order[..batch_size])?;
    let start = Instant::now();
    let mut processed = 0usize;
    let mut pos = 0;
    while start.elapsed() < duration {
        if pos + batch_size > order.len() {
            order = trainer.shuffled(&examples);
            pos = 0;
        }
        trainer.step(&order[pos..pos + batch_size])?;
        pos += batch_size;
        processed += batch_size;
    }
    Ok(processed as f64 / start.elapsed().as_secs_f64())
}
