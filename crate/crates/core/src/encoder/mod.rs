//! Siamese bi-encoder: token encoder, BiLSTM, pooling and a normalized
//! projection.
//!
//! Sentences and skill descriptions go through the same [`BiEncoderModel`];
//! there is exactly one copy of the parameters. All parameters live in one
//! flat `f64` buffer described by named segments, which keeps optimizers,
//! checkpointing and gradient reduction simple.
//!
//! The shipped token encoder is a trainable hashed embedding table: each
//! token contributes the rows for its unigram and for the bigram with its
//! predecessor.

mod linalg;
mod lstm;

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Header, TensorHeader};
use crate::error::{Error, Result};
use crate::io::{sha256_bytes, write_atomic};
use crate::text::{dot, fnv1a64, l2_norm, tokenize, SentenceEmbedder};

pub use linalg::Matrix;
use lstm::{LstmGrads, LstmTrace, LstmWeights};

pub const CHECKPOINT_KIND: &str = "biencoder";
/// Projection norms at or below this are rejected as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;
const MASKED_SCORE: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Attention,
    Mean,
    FirstToken,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Attention => "attention",
            Pooling::Mean => "mean",
            Pooling::FirstToken => "first_token",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Pooling::Attention),
            "mean" => Ok(Pooling::Mean),
            "first_token" | "cls" => Ok(Pooling::FirstToken),
            other => Err(Error::invalid(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Token encoder output width `h`.
    pub hidden_size: usize,
    /// LSTM hidden size per direction `h′`.
    pub lstm_hidden: usize,
    /// Attention projection width `a`.
    pub attention_dim: usize,
    /// Output embedding width `d`.
    pub embed_dim: usize,
    pub pooling: Pooling,
    /// When false the BiLSTM is skipped and pooling reads token vectors directly.
    pub bilstm: bool,
    /// Hash buckets of the token embedding table.
    pub vocab_buckets: usize,
    pub max_seq_len: usize,
    pub freeze_backbone: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_size: 768,
            lstm_hidden: 256,
            attention_dim: 256,
            embed_dim: 128,
            pooling: Pooling::Attention,
            bilstm: true,
            vocab_buckets: 32768,
            max_seq_len: 128,
            freeze_backbone: true,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    /// Small dimensions that train in seconds on the toy taxonomy.
    pub fn toy() -> Self {
        Self {
            hidden_size: 32,
            lstm_hidden: 32,
            attention_dim: 32,
            embed_dim: 64,
            vocab_buckets: 8192,
            freeze_backbone: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden_size", self.hidden_size),
            ("lstm_hidden", self.lstm_hidden),
            ("attention_dim", self.attention_dim),
            ("embed_dim", self.embed_dim),
            ("vocab_buckets", self.vocab_buckets),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Width of the rows fed to pooling.
    pub fn rep_width(&self) -> usize {
        if self.bilstm {
            2 * self.lstm_hidden
        } else {
            self.hidden_size
        }
    }
}

/// Contextual token matrix `L × h` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub values: Matrix,
    pub mask: Vec<bool>,
    /// Set when the input was clipped to `max_seq_len`.
    pub truncated: bool,
}

impl TokenMatrix {
    pub fn len(&self) -> usize {
        self.values.rows
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows == 0
    }
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v`, failing if its norm is not above [`DEGENERATE_EPS`].
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&v);
        if !(n > DEGENERATE_EPS) {
            return Err(Error::DegenerateEmbedding(n));
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(Self(v))
    }

    /// Wraps a vector that must already be unit norm to 1e-6.
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&v);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity, which is the dot product for unit vectors.
    pub fn sim(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// A named slice of the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct LstmRanges {
    w_ih: Range<usize>,
    w_hh: Range<usize>,
    bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    segments: Vec<Segment>,
    embedding: Range<usize>,
    lstm: Option<[LstmRanges; 2]>,
    attention: Option<(Range<usize>, Range<usize>)>,
    proj_w: Range<usize>,
    proj_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(c: &EncoderConfig) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: &'static str, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let range = offset..offset + n;
            offset += n;
            segments.push(Segment {
                name,
                shape,
                range: range.clone(),
            });
            range
        };
        let (h, hp, r) = (c.hidden_size, c.lstm_hidden, c.rep_width());
        let embedding = push("backbone.embedding", vec![c.vocab_buckets, h]);
        let lstm = c.bilstm.then(|| {
            [
                LstmRanges {
                    w_ih: push("lstm.fwd.w_ih", vec![4 * hp, h]),
                    w_hh: push("lstm.fwd.w_hh", vec![4 * hp, hp]),
                    bias: push("lstm.fwd.bias", vec![4 * hp]),
                },
                LstmRanges {
                    w_ih: push("lstm.bwd.w_ih", vec![4 * hp, h]),
                    w_hh: push("lstm.bwd.w_hh", vec![4 * hp, hp]),
                    bias: push("lstm.bwd.bias", vec![4 * hp]),
                },
            ]
        });
        let attention = (c.pooling == Pooling::Attention).then(|| {
            (
                push("attention.W", vec![c.attention_dim, r]),
                push("attention.w", vec![c.attention_dim]),
            )
        });
        let proj_w = push("proj.W", vec![c.embed_dim, r]);
        let proj_b = push("proj.b", vec![c.embed_dim]);
        Self {
            segments,
            embedding,
            lstm,
            attention,
            proj_w,
            proj_b,
            total: offset,
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    ids: Vec<(usize, usize)>,
    x: Matrix,
    mask: Vec<bool>,
    lstm: Option<[LstmTrace; 2]>,
    rep: Matrix,
    /// `tanh(W rep_ℓ)` rows for attention pooling.
    att_hidden: Option<Matrix>,
    alpha: Vec<f64>,
    v: Vec<f64>,
    norm: f64,
    pub embedding: Embedding,
}

impl ForwardTrace {
    /// Pooling weights over token positions.
    pub fn weights(&self) -> &[f64] {
        &self.alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoderModel {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl BiEncoderModel {
    /// Randomly initialized model; the draw depends only on `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let r = config.rep_width() as f64;
        for seg in &layout.segments {
            let bound = match seg.name {
                "backbone.embedding" => 0.5,
                "lstm.fwd.w_ih" | "lstm.fwd.w_hh" | "lstm.bwd.w_ih" | "lstm.bwd.w_hh" => {
                    1.0 / (config.lstm_hidden as f64).sqrt()
                }
                "lstm.fwd.bias" | "lstm.bwd.bias" => 0.0,
                "attention.w" => 1.0 / (config.attention_dim as f64).sqrt(),
                _ => 1.0 / r.sqrt(),
            };
            for p in &mut params[seg.range.clone()] {
                *p = if bound > 0.0 {
                    rng.gen_range(-bound..bound)
                } else {
                    0.0
                };
            }
        }
        if let Some(lstm) = &layout.lstm {
            let hp = config.lstm_hidden;
            for dir in lstm {
                // Forget-gate bias starts at one.
                for p in &mut params[dir.bias.start + hp..dir.bias.start + 2 * hp] {
                    *p = 1.0;
                }
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn segments(&self) -> &[Segment] {
        &self.layout.segments
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let seg = self.layout.segments.iter().find(|s| s.name == name)?;
        Some(&self.params[seg.range.clone()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let seg = self.layout.segments.iter().find(|s| s.name == name)?;
        Some(&mut self.params[seg.range.clone()])
    }

    /// Parameter range excluded from updates, if the backbone is frozen.
    pub fn frozen_range(&self) -> Option<Range<usize>> {
        self.config
            .freeze_backbone
            .then(|| self.layout.embedding.clone())
    }

    fn token_ids(&self, text: &str) -> Result<(Vec<(usize, usize)>, bool)> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Encoding(format!("text {text:?} has no tokens")));
        }
        let truncated = tokens.len() > self.config.max_seq_len;
        let v = self.config.vocab_buckets as u64;
        let mut prev = "<s>";
        let ids = tokens
            .iter()
            .take(self.config.max_seq_len)
            .map(|t| {
                let uni = (fnv1a64(t.as_bytes()) % v) as usize;
                let bi_key = format!("{prev}\u{1}{t}");
                let bi = (fnv1a64(bi_key.as_bytes()) % v) as usize;
                prev = t;
                (uni, bi)
            })
            .collect();
        Ok((ids, truncated))
    }

    fn lookup(&self, ids: &[(usize, usize)]) -> Matrix {
        let h = self.config.hidden_size;
        let table = &self.params[self.layout.embedding.clone()];
        let mut x = Matrix::zeros(ids.len(), h);
        for (t, &(uni, bi)) in ids.iter().enumerate() {
            let row = x.row_mut(t);
            for k in 0..h {
                row[k] = table[uni * h + k] + table[bi * h + k];
            }
        }
        x
    }

    /// Token encoder output for `text`, clipped to `max_seq_len` tokens.
    pub fn encode_tokens(&self, text: &str) -> Result<TokenMatrix> {
        let (ids, truncated) = self.token_ids(text)?;
        let values = self.lookup(&ids);
        Ok(TokenMatrix {
            mask: vec![true; values.rows],
            values,
            truncated,
        })
    }

    fn lstm_weights(&self, dir: usize) -> Option<LstmWeights<'_>> {
        let r = &self.layout.lstm.as_ref()?[dir];
        Some(LstmWeights {
            w_ih: &self.params[r.w_ih.clone()],
            w_hh: &self.params[r.w_hh.clone()],
            bias: &self.params[r.bias.clone()],
            hidden: self.config.lstm_hidden,
            input: self.config.hidden_size,
        })
    }

    fn check_tokens(&self, x: &Matrix, mask: &[bool], width: usize) -> Result<()> {
        if x.cols != width || mask.len() != x.rows {
            return Err(Error::Shape(format!(
                "expected L × {width} with a length-L mask, got {} × {} and mask {}",
                x.rows,
                x.cols,
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Encoding("every position is masked".into()));
        }
        Ok(())
    }

    fn bilstm_traced(&self, x: &Matrix, mask: &[bool]) -> Result<[LstmTrace; 2]> {
        let (Some(fw), Some(bw)) = (self.lstm_weights(0), self.lstm_weights(1)) else {
            return Err(Error::invalid("model is configured without a BiLSTM"));
        };
        self.check_tokens(x, mask, self.config.hidden_size)?;
        Ok([
            lstm::forward(&fw, x, mask, false),
            lstm::forward(&bw, x, mask, true),
        ])
    }

    fn concat(traces: &[LstmTrace; 2]) -> Matrix {
        let [f, b] = traces;
        let hp = f.out.cols;
        let mut out = Matrix::zeros(f.out.rows, 2 * hp);
        for t in 0..f.out.rows {
            let row = out.row_mut(t);
            row[..hp].copy_from_slice(f.out.row(t));
            row[hp..].copy_from_slice(b.out.row(t));
        }
        out
    }

    /// Bidirectional LSTM over the token matrix; rows are `[forward ‖ backward]`.
    pub fn bilstm(&self, tokens: &TokenMatrix) -> Result<Matrix> {
        let traces = self.bilstm_traced(&tokens.values, &tokens.mask)?;
        Ok(Self::concat(&traces))
    }

    fn attention_traced(&self, rep: &Matrix, mask: &[bool]) -> Result<(Vec<f64>, Matrix)> {
        let Some((w_r, v_r)) = &self.layout.attention else {
            return Err(Error::invalid("model is configured without attention pooling"));
        };
        self.check_tokens(rep, mask, self.config.rep_width())?;
        let a = self.config.attention_dim;
        let (w, wv) = (&self.params[w_r.clone()], &self.params[v_r.clone()]);
        let mut hidden = Matrix::zeros(rep.rows, a);
        let mut scores = vec![MASKED_SCORE; rep.rows];
        for t in 0..rep.rows {
            if !mask[t] {
                continue;
            }
            let s = hidden.row_mut(t);
            linalg::matvec_add(s, w, rep.cols, rep.row(t));
            s.iter_mut().for_each(|x| *x = x.tanh());
            scores[t] = dot(wv, s);
        }
        Ok((masked_softmax(&scores, mask), hidden))
    }

    /// Attention pooling: returns the pooled vector and the weights α.
    pub fn attention_pool(&self, rep: &Matrix, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (alpha, _) = self.attention_traced(rep, mask)?;
        Ok((weighted_sum(rep, &alpha), alpha))
    }

    /// Pooling weights for the configured variant.
    fn pool_weights(&self, rep: &Matrix, mask: &[bool]) -> Result<(Vec<f64>, Option<Matrix>)> {
        self.check_tokens(rep, mask, self.config.rep_width())?;
        match self.config.pooling {
            Pooling::Attention => {
                let (alpha, hidden) = self.attention_traced(rep, mask)?;
                Ok((alpha, Some(hidden)))
            }
            Pooling::Mean => {
                let n = mask.iter().filter(|&&m| m).count() as f64;
                Ok((mask.iter().map(|&m| if m { 1.0 / n } else { 0.0 }).collect(), None))
            }
            Pooling::FirstToken => {
                let first = mask.iter().position(|&m| m).unwrap_or(0);
                let mut alpha = vec![0.0; mask.len()];
                alpha[first] = 1.0;
                Ok((alpha, None))
            }
        }
    }

    /// Pools token rows with the configured variant.
    pub fn pool(&self, rep: &Matrix, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (alpha, _) = self.pool_weights(rep, mask)?;
        Ok((weighted_sum(rep, &alpha), alpha))
    }

    fn project_raw(&self, v: &[f64]) -> Result<Vec<f64>> {
        let r = self.config.rep_width();
        if v.len() != r {
            return Err(Error::Shape(format!("expected pooled width {r}, got {}", v.len())));
        }
        let mut y = self.params[self.layout.proj_b.clone()].to_vec();
        linalg::matvec_add(&mut y, &self.params[self.layout.proj_w.clone()], r, v);
        Ok(y)
    }

    /// Affine projection followed by L2 normalization.
    pub fn project(&self, v: &[f64]) -> Result<Embedding> {
        Embedding::normalized(self.project_raw(v)?)
    }

    /// Full forward pass keeping every intermediate needed by [`Self::backward`].
    pub fn forward(&self, text: &str) -> Result<ForwardTrace> {
        let (ids, _) = self.token_ids(text)?;
        let x = self.lookup(&ids);
        let mask = vec![true; x.rows];
        let (lstm, rep) = if self.config.bilstm {
            let traces = self.bilstm_traced(&x, &mask)?;
            let rep = Self::concat(&traces);
            (Some(traces), rep)
        } else {
            (None, x.clone())
        };
        let (alpha, att_hidden) = self.pool_weights(&rep, &mask)?;
        let v = weighted_sum(&rep, &alpha);
        let y = self.project_raw(&v)?;
        let norm = l2_norm(&y);
        let embedding = Embedding::normalized(y)?;
        Ok(ForwardTrace {
            ids,
            x,
            mask,
            lstm,
            rep,
            att_hidden,
            alpha,
            v,
            norm,
            embedding,
        })
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        Ok(self.forward(text)?.embedding)
    }

    /// Embeds many texts in parallel; output order matches input order.
    pub fn embed_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<Embedding>> {
        texts.par_iter().map(|t| self.embed(t.as_ref())).collect()
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂e` for the traced text.
    pub fn backward(&self, trace: &ForwardTrace, d_emb: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let e = trace.embedding.as_slice();
        let r = self.config.rep_width();
        // Through the normalization: dy = (de − e⟨e, de⟩) / ‖y‖.
        let proj = dot(e, d_emb);
        let dy: Vec<f64> = e
            .iter()
            .zip(d_emb)
            .map(|(ei, di)| (di - ei * proj) / trace.norm)
            .collect();
        linalg::outer_add(&mut grads[self.layout.proj_w.clone()], &dy, &trace.v);
        for (g, d) in grads[self.layout.proj_b.clone()].iter_mut().zip(&dy) {
            *g += d;
        }
        let mut dv = vec![0.0; r];
        linalg::matvec_t_add(&mut dv, &self.params[self.layout.proj_w.clone()], r, &dy);

        let rep = &trace.rep;
        let mut d_rep = Matrix::zeros(rep.rows, r);
        for t in 0..rep.rows {
            let a = trace.alpha[t];
            if a != 0.0 {
                d_rep.row_mut(t).iter_mut().zip(&dv).for_each(|(o, d)| *o += a * d);
            }
        }
        if let (Some((w_r, v_r)), Some(hidden)) = (&self.layout.attention, &trace.att_hidden) {
            let d_alpha: Vec<f64> = (0..rep.rows).map(|t| dot(&dv, rep.row(t))).collect();
            let mean: f64 = trace.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            let wv = &self.params[v_r.clone()];
            let w = &self.params[w_r.clone()];
            let a_dim = self.config.attention_dim;
            let mut d_pre = vec![0.0; a_dim];
            for t in 0..rep.rows {
                if !trace.mask[t] {
                    continue;
                }
                let du = trace.alpha[t] * (d_alpha[t] - mean);
                if du == 0.0 {
                    continue;
                }
                let s = hidden.row(t);
                for (g, sk) in grads[v_r.clone()].iter_mut().zip(s) {
                    *g += du * sk;
                }
                for k in 0..a_dim {
                    d_pre[k] = du * wv[k] * (1.0 - s[k] * s[k]);
                }
                linalg::outer_add(&mut grads[w_r.clone()], &d_pre, rep.row(t));
                linalg::matvec_t_add(d_rep.row_mut(t), w, r, &d_pre);
            }
        }

        let dx = match (&self.layout.lstm, &trace.lstm) {
            (Some(ranges), Some(traces)) => {
                let hp = self.config.lstm_hidden;
                let mut dx = Matrix::zeros(rep.rows, self.config.hidden_size);
                for dir in 0..2 {
                    let mut d_out = Matrix::zeros(rep.rows, hp);
                    for t in 0..rep.rows {
                        d_out
                            .row_mut(t)
                            .copy_from_slice(&d_rep.row(t)[dir * hp..(dir + 1) * hp]);
                    }
                    let w = self.lstm_weights(dir).expect("lstm weights");
                    let rg = &ranges[dir];
                    let (w_ih, w_hh, bias) = split3(grads, &rg.w_ih, &rg.w_hh, &rg.bias);
                    let mut g = LstmGrads { w_ih, w_hh, bias };
                    lstm::backward(&w, &traces[dir], &trace.x, &trace.mask, &d_out, &mut g, &mut dx);
                }
                dx
            }
            _ => d_rep,
        };
        if self.config.freeze_backbone {
            return;
        }
        let h = self.config.hidden_size;
        let table = &mut grads[self.layout.embedding.clone()];
        for (t, &(uni, bi)) in trace.ids.iter().enumerate() {
            if !trace.mask[t] {
                continue;
            }
            for k in 0..h {
                let d = dx.row(t)[k];
                table[uni * h + k] += d;
                table[bi * h + k] += d;
            }
        }
    }

    /// Rounds every parameter to `f32`, the precision stored in checkpoints.
    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let segments = &self.layout.segments;
        Ok(Checkpoint {
            header: Header {
                kind: CHECKPOINT_KIND.into(),
                config: serde_json::to_value(&self.config)?,
                metadata: serde_json::json!({ "seed": self.config.seed, "param_count": self.params.len() }),
                tensors: segments
                    .iter()
                    .map(|s| TensorHeader {
                        name: s.name.into(),
                        shape: s.shape.clone(),
                    })
                    .collect(),
            },
            data: segments
                .iter()
                .map(|s| self.params[s.range.clone()].iter().map(|&p| p as f32).collect())
                .collect(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {:?}",
                ckpt.header.kind
            )));
        }
        let config: EncoderConfig = serde_json::from_value(ckpt.header.config.clone())?;
        let mut model = Self::new(config)?;
        for seg in model.layout.segments.clone() {
            let data = ckpt
                .tensor(seg.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", seg.name)))?;
            if data.len() != seg.range.len() {
                return Err(Error::Checkpoint(format!("tensor {} has wrong shape", seg.name)));
            }
            for (p, &x) in model.params[seg.range].iter_mut().zip(data) {
                *p = x as f64;
            }
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_checkpoint()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> Result<[u8; 32]> {
        Ok(sha256_bytes(&self.to_bytes()?))
    }
}

impl SentenceEmbedder for BiEncoderModel {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed(text)?.into_vec())
    }
}

fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

fn weighted_sum(rep: &Matrix, alpha: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; rep.cols];
    for (t, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            v.iter_mut().zip(rep.row(t)).for_each(|(o, x)| *o += a * x);
        }
    }
    v
}

/// Three disjoint, ascending mutable sub-slices of `buf`.
fn split3<'a>(
    buf: &'a mut [f64],
    a: &Range<usize>,
    b: &Range<usize>,
    c: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
    assert!(a.end <= b.start && b.end <= c.start);
    let (_, rest) = buf.split_at_mut(a.start);
    let (ra, rest) = rest.split_at_mut(a.len());
    let (_, rest) = rest.split_at_mut(b.start - a.end);
    let (rb, rest) = rest.split_at_mut(b.len());
    let (_, rest) = rest.split_at_mut(c.start - b.end);
    let (rc, _) = rest.split_at_mut(c.len());
    (ra, rb, rc)
}
