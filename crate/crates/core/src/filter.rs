//! Sentence segmentation and the skill / non-skill sentence filter.
//!
//! The scorer is logistic regression over hashed character n-grams, trained
//! with binary cross-entropy on a class-balanced set. Its threshold is
//! chosen on held-out data to maximize precision under a recall floor.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Header, TensorHeader};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_atomic, write_jsonl};
use crate::text::{char_ngrams, fnv1a64};

pub const CHECKPOINT_KIND: &str = "filter";
pub const DELIMITERS: &[char] = &['。', '．', '.', '！', '!', '？', '?'];
/// Requirement words used by the keyword baseline.
pub const DEFAULT_LEXICON: &[&str] = &[
    "熟悉", "掌握", "精通", "了解", "经验", "能力", "具备", "熟练", "擅长", "负责", "优先", "技能",
];

/// Splits a posting at sentence-final punctuation, dropping the delimiters
/// and any blank segments.
pub fn segment_posting(text: &str) -> Vec<String> {
    text.split(DELIMITERS)
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// A sentence with a binary label, stored as `{"text": .., "label": 0|1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    #[serde(with = "label01")]
    pub label: bool,
}

mod label01 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

pub fn save_labeled(path: &Path, rows: &[LabeledSentence]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledSentence>> {
    let rows: Vec<LabeledSentence> = read_jsonl(path)?;
    if let Some(i) = rows.iter().position(|r| r.text.is_empty()) {
        return Err(Error::invalid(format!("{}: row {} has empty text", path.display(), i + 1)));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Hash buckets for the n-gram features.
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Share of the balanced data held out for threshold selection; zero
    /// keeps everything for training and uses τ = 0.5.
    pub validation_fraction: f64,
    pub min_recall: f64,
    /// Recorded in the model metadata.
    pub positive_set: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            dim: 1 << 14,
            min_n: 1,
            max_n: 3,
            epochs: 20,
            learning_rate: 0.5,
            l2: 1e-5,
            seed: 42,
            validation_fraction: 0.2,
            min_recall: 0.8,
            positive_set: "combined".into(),
        }
    }
}

/// Outcome of [`select_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when no candidate reached the recall floor.
    pub constraint_met: bool,
}

/// Picks τ from the unique scores and 0: highest precision among candidates
/// with recall ≥ `min_recall`, then higher recall, then lower τ. Without a
/// qualifying candidate, the highest-recall one is returned (lowest τ on ties).
pub fn select_threshold(scores: &[f64], labels: &[bool], min_recall: f64) -> Result<ThresholdChoice> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::invalid("threshold selection needs at least one positive"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let evaluate = |tau: f64| {
        let (mut tp, mut kept) = (0usize, 0usize);
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= tau {
                kept += 1;
                tp += l as usize;
            }
        }
        let precision = if kept == 0 { 0.0 } else { tp as f64 / kept as f64 };
        ThresholdChoice {
            tau,
            precision,
            recall: tp as f64 / positives as f64,
            constraint_met: false,
        }
    };
    let all: Vec<ThresholdChoice> = candidates.iter().map(|&t| evaluate(t)).collect();
    // Candidates ascend in τ, so keeping the first best favors lower τ.
    let mut best: Option<ThresholdChoice> = None;
    for c in all.iter().filter(|c| c.recall >= min_recall) {
        let better = match best {
            None => true,
            Some(b) => c.precision > b.precision || (c.precision == b.precision && c.recall > b.recall),
        };
        if better {
            best = Some(*c);
        }
    }
    if let Some(mut b) = best {
        b.constraint_met = true;
        return Ok(b);
    }
    log::warn!("no threshold reaches recall {min_recall}; using the highest-recall threshold");
    let mut fallback = all[0];
    for c in &all {
        if c.recall > fallback.recall {
            fallback = *c;
        }
    }
    Ok(fallback)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetadata {
    pub positive_set: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_size: usize,
    pub threshold: Option<ThresholdChoice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub config: FilterConfig,
    weights: Vec<f64>,
    bias: f64,
    tau: f64,
    pub metadata: FilterMetadata,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn features(text: &str, config: &FilterConfig) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = char_ngrams(text, config.min_n, config.max_n)
        .iter()
        .map(|g| (fnv1a64(g.as_bytes()) % config.dim as u64) as usize)
        .collect();
    idx.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((j, c)) if *j == i => *c += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    let norm = out.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|(_, c)| *c /= norm);
    }
    out
}

impl FilterModel {
    /// `P(skill | text)`.
    pub fn score(&self, text: &str) -> f64 {
        let z: f64 = self.bias
            + features(text, &self.config)
                .iter()
                .map(|&(i, x)| self.weights[i] * x)
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn scores<S: AsRef<str>>(&self, texts: &[S]) -> Vec<f64> {
        texts.iter().map(|t| self.score(t.as_ref())).collect()
    }

    pub fn threshold(&self) -> f64 {
        self.tau
    }

    pub fn set_threshold(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("threshold {tau} is outside [0, 1]")));
        }
        self.tau = tau;
        Ok(())
    }

    pub fn keeps(&self, text: &str) -> bool {
        self.score(text) >= self.tau
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            header: Header {
                kind: CHECKPOINT_KIND.into(),
                config: serde_json::to_value(&self.config)?,
                metadata: serde_json::json!({
                    "tau": self.tau,
                    "filter": self.metadata,
                }),
                tensors: vec![
                    TensorHeader { name: "weights".into(), shape: vec![self.weights.len()] },
                    TensorHeader { name: "bias".into(), shape: vec![1] },
                ],
            },
            data: vec![
                self.weights.iter().map(|&w| w as f32).collect(),
                vec![self.bias as f32],
            ],
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {:?}",
                ckpt.header.kind
            )));
        }
        let config: FilterConfig = serde_json::from_value(ckpt.header.config.clone())?;
        let missing = |n: &str| Error::Checkpoint(format!("missing tensor {n}"));
        let weights = ckpt.tensor("weights").ok_or_else(|| missing("weights"))?;
        let bias = ckpt.tensor("bias").ok_or_else(|| missing("bias"))?;
        if weights.len() != config.dim || bias.len() != 1 {
            return Err(Error::Checkpoint("filter tensors do not match config".into()));
        }
        let meta = &ckpt.header.metadata;
        let tau = meta["tau"]
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("missing tau".into()))?;
        let metadata: FilterMetadata = serde_json::from_value(meta["filter"].clone())?;
        Ok(Self {
            config,
            weights: weights.iter().map(|&w| w as f64).collect(),
            bias: bias[0] as f64,
            tau,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint()?.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)
    }
}

/// Downsamples the larger class to the size of the smaller one, then
/// trains; with a validation fraction, τ is selected on the held-out part.
pub fn train_filter<S: AsRef<str>>(positives: &[S], negatives: &[S], config: &FilterConfig) -> Result<FilterModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Training("filter training needs both classes".into()));
    }
    if config.dim == 0 || config.min_n == 0 || config.max_n < config.min_n {
        return Err(Error::invalid("filter feature config is invalid"));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::invalid("validation_fraction must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = positives.len().min(negatives.len());
    let mut pick = |texts: &[S]| {
        let mut idx: Vec<usize> = (0..texts.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.into_iter().map(|i| texts[i].as_ref().to_string()).collect::<Vec<_>>()
    };
    let pos = pick(positives);
    let neg = pick(negatives);
    let n_val = (n as f64 * config.validation_fraction).round() as usize;
    let n_val = if config.validation_fraction > 0.0 { n_val.clamp(1, n.saturating_sub(1)) } else { 0 };
    let mut train: Vec<(String, bool)> = Vec::new();
    let mut val: Vec<(String, bool)> = Vec::new();
    for (texts, label) in [(&pos, true), (&neg, false)] {
        for (i, t) in texts.iter().enumerate() {
            if i < n_val {
                val.push((t.clone(), label));
            } else {
                train.push((t.clone(), label));
            }
        }
    }
    let feats: Vec<(Vec<(usize, f64)>, f64)> = train
        .iter()
        .map(|(t, l)| (features(t, config), if *l { 1.0 } else { 0.0 }))
        .collect();
    let mut weights = vec![0.0; config.dim];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..feats.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &feats[i];
            let z = bias + x.iter().map(|&(j, v)| weights[j] * v).sum::<f64>();
            let g = sigmoid(z) - y;
            for &(j, v) in x {
                weights[j] -= config.learning_rate * (g * v + config.l2 * weights[j]);
            }
            bias -= config.learning_rate * g;
        }
    }
    // Keep exactly what a checkpoint stores, so τ stays valid after reload.
    weights.iter_mut().for_each(|w| *w = *w as f32 as f64);
    let bias = bias as f32 as f64;
    let mut model = FilterModel {
        config: config.clone(),
        weights,
        bias,
        tau: 0.5,
        metadata: FilterMetadata {
            positive_set: config.positive_set.clone(),
            seed: config.seed,
            epochs: config.epochs,
            train_size: feats.len(),
            threshold: None,
        },
    };
    if !val.is_empty() {
        let scores: Vec<f64> = val.iter().map(|(t, _)| model.score(t)).collect();
        let labels: Vec<bool> = val.iter().map(|(_, l)| *l).collect();
        let choice = select_threshold(&scores, &labels, config.min_recall)?;
        model.tau = choice.tau;
        model.metadata.threshold = Some(choice);
    }
    Ok(model)
}

/// Sentences whose score is at least τ, in input order.
pub fn apply_filter<S: AsRef<str>>(model: &FilterModel, sentences: &[S]) -> Vec<String> {
    sentences
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| model.keeps(s))
        .map(str::to_string)
        .collect()
}

/// Labels a sentence as a skill sentence iff some lexicon entry occurs in it.
pub fn keyword_baseline<S: AsRef<str>>(sentences: &[S], lexicon: &[&str]) -> Vec<bool> {
    sentences
        .iter()
        .map(|s| lexicon.iter().any(|w| s.as_ref().contains(w)))
        .collect()
}

#[cfg(test)]
mod tests;
