//! Text utilities shared by the encoder, the filter and the lexical baselines.
//!
//! The target language has no whitespace word boundaries, so every CJK
//! character is its own token and most features are character n-grams.

use crate::error::Result;

/// CJK unified ideographs plus the common extension and compatibility blocks.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

/// Splits text into model tokens.
///
/// CJK characters are single tokens, runs of other alphanumerics form one
/// lower-cased word token, whitespace is dropped and any remaining symbol is
/// kept as a one-character token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() && !is_cjk(c) {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if c.is_whitespace() {
            continue;
        }
        tokens.push(c.to_string());
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Lower-cases and collapses whitespace runs to a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.trim().chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

/// All character n-grams of the normalized text for `n` in `min_n..=max_n`,
/// in order of occurrence. Texts shorter than `min_n` yield their whole
/// normalized form as a single gram so that they are never featureless.
pub fn char_ngrams(text: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let chars: Vec<char> = normalize(text).chars().collect();
    let mut grams = Vec::new();
    if chars.is_empty() {
        return grams;
    }
    if chars.len() < min_n {
        grams.push(chars.iter().collect());
        return grams;
    }
    for n in min_n..=max_n {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

/// 64-bit FNV-1a. Used wherever a hash must be stable across runs and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0.0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Anything that maps a sentence to a vector, compared by cosine.
pub trait SentenceEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

impl<F> SentenceEmbedder for F
where
    F: Fn(&str) -> Result<Vec<f64>>,
{
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self(text)
    }
}

/// Feature-hashed bag of character n-grams, L2-normalized.
///
/// This is the fallback embedder for near-duplicate detection before any
/// bi-encoder exists.
#[derive(Debug, Clone)]
pub struct CharNgramEmbedder {
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
}

impl Default for CharNgramEmbedder {
    fn default() -> Self {
        Self {
            dim: 4096,
            min_n: 1,
            max_n: 3,
        }
    }
}

impl CharNgramEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for gram in char_ngrams(text, self.min_n, self.max_n) {
            let bucket = (fnv1a64(gram.as_bytes()) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = l2_norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl SentenceEmbedder for CharNgramEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.vector(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_mixes_cjk_and_words() {
        assert_eq!(
            tokenize("熟悉Java 和 SQL!"),
            vec!["熟", "悉", "java", "和", "sql", "!"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn ngrams_cover_range() {
        let grams = char_ngrams("abcd", 2, 3);
        assert_eq!(grams, vec!["ab", "bc", "cd", "abc", "bcd"]);
        assert_eq!(char_ngrams("a", 2, 4), vec!["a"]);
        assert!(char_ngrams("", 2, 4).is_empty());
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn ngram_embedder_self_similarity() {
        let e = CharNgramEmbedder::default();
        let a = e.vector("熟练掌握机器学习");
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        let b = e.vector("公司提供五险一金");
        assert!(cosine(&a, &b) < 0.3);
    }
}
