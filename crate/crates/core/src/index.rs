//! Flat cosine index over skill embeddings, sentence and posting prediction,
//! and γ tuning.
//!
//! Index file layout, little-endian:
//!
//! ```text
//! magic        b"SKFGINDX"
//! version      u32
//! d            u32
//! n            u32
//! fingerprint  32 bytes (SHA-256 of the encoder checkpoint)
//! ids          n × (u32 byte length, UTF-8 bytes)
//! matrix       n × d f32, row-major
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{BiEncoderModel, Embedding};
use crate::error::{Error, Result};
use crate::evaluation::{f1_at_k, GoldPosting, RankedResult};
use crate::filter::{segment_posting, FilterModel};
use crate::io::write_atomic;
use crate::taxonomy::SkillTaxonomy;

pub const MAGIC: &[u8; 8] = b"SKFGINDX";
pub const VERSION: u32 = 1;
pub const DEFAULT_BUDGET: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    /// Top-K budget `K_r`.
    pub budget: usize,
    /// Similarity threshold γ.
    pub gamma: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            gamma: 0.5,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("retrieval budget must be at least 1"));
        }
        if self.gamma.is_nan() {
            return Err(Error::invalid("gamma is NaN"));
        }
        Ok(())
    }
}

/// The γ grid 0.00, 0.05, …, 0.95.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillIndex {
    ids: Vec<String>,
    dim: usize,
    /// `|S| × d`, row-major.
    matrix: Vec<f32>,
    fingerprint: [u8; 32],
}

impl SkillIndex {
    /// Checks shapes, id uniqueness and unit-norm rows (±1e-5).
    pub fn new(ids: Vec<String>, dim: usize, matrix: Vec<f32>, fingerprint: [u8; 32]) -> Result<Self> {
        if dim == 0 || matrix.len() != ids.len() * dim {
            return Err(Error::Index(format!(
                "matrix has {} values, expected {} × {dim}",
                matrix.len(),
                ids.len()
            )));
        }
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Index("duplicate skill ids".into()));
        }
        for (i, row) in matrix.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::Index(format!("row {} ({}) has norm {norm}", i, ids[i])));
            }
        }
        Ok(Self {
            ids,
            dim,
            matrix,
            fingerprint,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    /// Cosine similarity of `e` to every row, in row order.
    pub fn similarities(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.dim {
            return Err(Error::Index(format!(
                "query has dimension {}, index has {}",
                e.len(),
                self.dim
            )));
        }
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(e).map(|(&a, b)| a as f64 * b).sum())
            .collect())
    }

    /// Every skill ranked by descending similarity, ties by ascending id.
    fn ranked(&self, e: &[f64]) -> Result<Vec<(usize, f64)>> {
        let sims = self.similarities(e)?;
        let mut order: Vec<(usize, f64)> = sims.into_iter().enumerate().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        Ok(order)
    }

    /// Top-`budget` skills by cosine similarity, then those with similarity ≥ γ.
    pub fn query(&self, e: &Embedding, params: &RetrievalParams) -> Result<Vec<(String, f64)>> {
        params.validate()?;
        Ok(self
            .ranked(e.as_slice())?
            .into_iter()
            .take(params.budget)
            .filter(|(_, s)| *s >= params.gamma)
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + self.matrix.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Index("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Index("skill id is not UTF-8".into()))?;
            ids.push(id.to_string());
        }
        let body = r.take(n * dim * 4)?;
        if r.pos != bytes.len() {
            return Err(Error::Index("trailing bytes after matrix".into()));
        }
        let matrix = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(ids, dim, matrix, fingerprint)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Index("index file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Embeds every skill description with `model`.
pub fn build_index(model: &BiEncoderModel, tax: &SkillTaxonomy) -> Result<SkillIndex> {
    if tax.is_empty() {
        return Err(Error::Index("taxonomy is empty".into()));
    }
    let rows: Vec<Embedding> = tax
        .skills()
        .par_iter()
        .map(|s| {
            model
                .embed(&s.description)
                .map_err(|e| Error::Index(format!("skill {}: {e}", s.skill_id)))
        })
        .collect::<Result<_>>()?;
    let matrix = rows
        .iter()
        .flat_map(|e| e.as_slice().iter().map(|&x| x as f32))
        .collect();
    SkillIndex::new(
        tax.skills().iter().map(|s| s.skill_id.clone()).collect(),
        model.config().embed_dim,
        matrix,
        model.fingerprint()?,
    )
}

pub fn save_index(index: &SkillIndex, path: &Path) -> Result<()> {
    write_atomic(path, &index.to_bytes())
}

pub fn load_index(path: &Path) -> Result<SkillIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SkillIndex::from_bytes(&bytes)
}

pub fn predict_sentence(
    model: &BiEncoderModel,
    index: &SkillIndex,
    text: &str,
    params: &RetrievalParams,
) -> Result<Vec<(String, f64)>> {
    index.query(&model.embed(text)?, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePrediction {
    pub text: String,
    /// `(skill_id, similarity)` pairs, most similar first.
    pub skills: Vec<(String, f64)>,
}

/// One posting's predictions, serialized as a prediction JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostingPrediction {
    pub posting_id: String,
    /// Union over retained sentences, ascending.
    pub skill_ids: Vec<String>,
    pub per_sentence: Vec<SentencePrediction>,
}

impl PostingPrediction {
    fn from_sentences(posting_id: &str, per_sentence: Vec<SentencePrediction>) -> Self {
        let skill_ids: BTreeSet<String> = per_sentence
            .iter()
            .flat_map(|s| s.skills.iter().map(|(id, _)| id.clone()))
            .collect();
        Self {
            posting_id: posting_id.to_string(),
            skill_ids: skill_ids.into_iter().collect(),
            per_sentence,
        }
    }

    /// Highest similarity per predicted skill across sentences.
    pub fn max_similarity(&self) -> BTreeMap<String, f64> {
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for (id, s) in self.per_sentence.iter().flat_map(|p| &p.skills) {
            let e = best.entry(id.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(*s);
        }
        best
    }

    /// Posting skills ordered by their best similarity, ties by id.
    pub fn ranked(&self) -> Vec<String> {
        let mut v: Vec<(String, f64)> = self.max_similarity().into_iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().map(|(id, _)| id).collect()
    }
}

/// Sentences of `text` kept by the filter at threshold `tau` (all of them
/// without a filter).
fn retained(filter: Option<&FilterModel>, text: &str, tau: f64) -> Vec<String> {
    segment_posting(text)
        .into_iter()
        .filter(|s| filter.is_none_or(|f| f.score(s) >= tau))
        .collect()
}

/// Segments, filters, retrieves per sentence and takes the union.
pub fn predict_posting(
    filter: Option<&FilterModel>,
    model: &BiEncoderModel,
    index: &SkillIndex,
    posting_id: &str,
    text: &str,
    tau: f64,
    params: &RetrievalParams,
) -> Result<PostingPrediction> {
    let per_sentence = retained(filter, text, tau)
        .into_iter()
        .map(|s| {
            let skills = predict_sentence(model, index, &s, params)?;
            Ok(SentencePrediction { text: s, skills })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PostingPrediction::from_sentences(posting_id, per_sentence))
}

/// [`predict_posting`] over many postings in parallel, in input order.
pub fn predict_postings(
    filter: Option<&FilterModel>,
    model: &BiEncoderModel,
    index: &SkillIndex,
    postings: &[GoldPosting],
    tau: f64,
    params: &RetrievalParams,
) -> Result<Vec<PostingPrediction>> {
    postings
        .par_iter()
        .map(|p| predict_posting(filter, model, index, &p.posting_id, &p.text, tau, params))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaChoice {
    pub gamma: f64,
    pub f1_at_5: f64,
    /// `(γ, F1@5)` for every grid value, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Evaluates `score(γ)` over the grid and returns the maximizer; ties go
/// to the smaller γ.
pub fn tune_gamma<F>(grid: &[f64], mut score: F) -> Result<GammaChoice>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::invalid("gamma grid is empty"));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &g in grid {
        curve.push((g, score(g)?));
    }
    let mut best = curve[0];
    for &(g, f) in &curve[1..] {
        if f > best.1 || (f == best.1 && g < best.0) {
            best = (g, f);
        }
    }
    if best.1 == 0.0 {
        log::warn!("every gamma scores F1@5 = 0; returning the smallest grid value");
    }
    Ok(GammaChoice {
        gamma: best.0,
        f1_at_5: best.1,
        curve,
    })
}

/// Tunes γ for the full pipeline on annotated dev postings by F1@5.
///
/// Sentence retrieval is done once at γ = −∞ and thresholded per grid value.
pub fn tune_gamma_on_postings(
    filter: Option<&FilterModel>,
    model: &BiEncoderModel,
    index: &SkillIndex,
    dev: &[GoldPosting],
    tau: f64,
    budget: usize,
    grid: &[f64],
) -> Result<GammaChoice> {
    if dev.is_empty() || dev.iter().all(|p| p.skill_ids.is_empty()) {
        return Err(Error::invalid("dev set needs at least one gold skill"));
    }
    let open = RetrievalParams {
        budget,
        gamma: f64::NEG_INFINITY,
    };
    let cached = predict_postings(filter, model, index, dev, tau, &open)?;
    let scored: Vec<(&GoldPosting, &PostingPrediction)> =
        dev.iter().zip(&cached).filter(|(g, _)| !g.skill_ids.is_empty()).collect();
    tune_gamma(grid, |gamma| {
        let results: Vec<RankedResult> = scored
            .iter()
            .map(|(gold, pred)| {
                let per_sentence = pred
                    .per_sentence
                    .iter()
                    .map(|s| SentencePrediction {
                        text: s.text.clone(),
                        skills: s.skills.iter().filter(|(_, v)| *v >= gamma).cloned().collect(),
                    })
                    .collect();
                let p = PostingPrediction::from_sentences(&pred.posting_id, per_sentence);
                RankedResult::new(&gold.posting_id, p.ranked(), gold.skill_ids.iter().cloned())
            })
            .collect();
        f1_at_k(&results, 5)
    })
}

#[cfg(test)]
mod tests;
