//! Near-duplicate removal and per-label n-gram diversity checks.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use super::SyntheticSample;
use crate::error::{Error, Result};
use crate::taxonomy::SkillTaxonomy;
use crate::text::{cosine, SentenceEmbedder};

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<SyntheticSample>,
    pub removed_count: usize,
    pub exact_duplicates: usize,
    pub near_duplicates: usize,
    pub embed_failures: usize,
}

/// Removes exact duplicate texts (first occurrence wins), then scans the
/// rest in order and drops every sample whose cosine similarity to an
/// already kept sample reaches `cutoff`.
pub fn dedup(
    samples: &[SyntheticSample],
    embedder: &dyn SentenceEmbedder,
    cutoff: f64,
) -> Result<DedupOutcome> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid(format!("dedup cutoff {cutoff} outside (0, 1]")));
    }
    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(samples.len());
    for s in samples {
        if seen.insert(s.text.as_str()) {
            unique.push(s);
        }
    }
    let exact_duplicates = samples.len() - unique.len();

    let mut kept: Vec<SyntheticSample> = Vec::with_capacity(unique.len());
    let mut kept_vecs: Vec<Vec<f64>> = Vec::with_capacity(unique.len());
    let mut near_duplicates = 0;
    let mut embed_failures = 0;
    for s in unique {
        let v = match embedder.embed_text(&s.text) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("dropping sample {:?}: embedding failed: {e}", s.text);
                embed_failures += 1;
                continue;
            }
        };
        if kept_vecs.iter().any(|k| cosine(k, &v) >= cutoff) {
            near_duplicates += 1;
            continue;
        }
        kept.push(s.clone());
        kept_vecs.push(v);
    }
    Ok(DedupOutcome {
        kept,
        removed_count: exact_duplicates + near_duplicates + embed_failures,
        exact_duplicates,
        near_duplicates,
        embed_failures,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub ngram: String,
    /// Number of distinct sentences containing the n-gram.
    pub count: usize,
    pub sentence_indices: Vec<usize>,
}

/// Character n-grams shared by more than `max_repeats` distinct sentences of
/// one label. Violations are listed in order of first occurrence.
pub fn ngram_diversity_violations<S: AsRef<str>>(
    sentences: &[S],
    n: usize,
    max_repeats: usize,
) -> Result<Vec<Violation>> {
    if n < 2 {
        return Err(Error::invalid(format!("n-gram size must be at least 2, got {n}")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut occurrences: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, s) in sentences.iter().enumerate() {
        let chars: Vec<char> = s.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        let mut local = HashSet::new();
        for w in chars.windows(n) {
            let gram: String = w.iter().collect();
            if !local.insert(gram.clone()) {
                continue;
            }
            let entry = occurrences.entry(gram.clone()).or_insert_with(|| {
                order.push(gram);
                Vec::new()
            });
            entry.push(i);
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|gram| {
            let idx = &occurrences[&gram];
            (idx.len() > max_repeats).then(|| Violation {
                count: idx.len(),
                sentence_indices: idx.clone(),
                ngram: gram,
            })
        })
        .collect())
}

/// Indices to drop so that no n-gram is shared by more than `max_repeats`
/// sentences: for every violation all but its first `max_repeats`
/// sentences go.
pub(crate) fn violation_drops(violations: &[Violation], max_repeats: usize) -> HashSet<usize> {
    violations
        .iter()
        .flat_map(|v| v.sentence_indices.iter().skip(max_repeats).copied())
        .collect()
}

/// Flags skills whose description has at least `min_neighbors` other skills
/// at cosine similarity `>= highsim`.
pub fn ambiguous_skills(
    tax: &SkillTaxonomy,
    embedder: &(dyn SentenceEmbedder + Sync),
    highsim: f64,
    min_neighbors: usize,
) -> Result<Vec<bool>> {
    let vecs: Vec<Vec<f64>> = tax
        .skills()
        .par_iter()
        .map(|s| embedder.embed_text(&s.description))
        .collect::<Result<_>>()?;
    Ok((0..vecs.len())
        .into_par_iter()
        .map(|i| {
            let close = vecs
                .iter()
                .enumerate()
                .filter(|&(j, v)| j != i && cosine(&vecs[i], v) >= highsim)
                .count();
            close >= min_neighbors
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syngen::{Source, Variant};
    use crate::text::CharNgramEmbedder;
    use proptest::prelude::*;

    fn sample(text: &str) -> SyntheticSample {
        SyntheticSample {
            text: text.into(),
            skill_ids: vec!["s".into()],
            variant: Variant::Single,
            source: Source::Stub,
        }
    }

    #[test]
    fn exact_duplicates_removed() {
        let out = dedup(&[sample("甲乙"), sample("甲乙")], &CharNgramEmbedder::default(), 0.95).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.removed_count, 1);
        assert_eq!(out.exact_duplicates, 1);
    }

    #[test]
    fn orthogonal_embeddings_all_kept() {
        let emb = |t: &str| -> Result<Vec<f64>> {
            Ok(match t {
                "a" => vec![1.0, 0.0, 0.0],
                "b" => vec![0.0, 1.0, 0.0],
                _ => vec![0.0, 0.0, 1.0],
            })
        };
        let out = dedup(&[sample("a"), sample("b"), sample("c")], &emb, 0.95).unwrap();
        assert_eq!(out.kept.len(), 3);
        assert_eq!(out.removed_count, 0);
    }

    #[test]
    fn greedy_scan_keeps_a_and_c() {
        // cos(a,b)=0.97, cos(a,c)=cos(b,c)=0.3
        let sb = (1.0f64 - 0.97 * 0.97).sqrt();
        let cy = (0.3 - 0.97 * 0.3) / sb;
        let cz = (1.0 - 0.09 - cy * cy).sqrt();
        let emb = move |t: &str| -> Result<Vec<f64>> {
            Ok(match t {
                "a" => vec![1.0, 0.0, 0.0],
                "b" => vec![0.97, sb, 0.0],
                _ => vec![0.3, cy, cz],
            })
        };
        assert!((cosine(&emb("b").unwrap(), &emb("c").unwrap()) - 0.3).abs() < 1e-12);
        let out = dedup(&[sample("a"), sample("b"), sample("c")], &emb, 0.95).unwrap();
        let kept: Vec<_> = out.kept.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(kept, vec!["a", "c"]);
        assert_eq!(out.removed_count, 1);
    }

    #[test]
    fn embedder_failure_counts_as_removed() {
        let emb = |t: &str| -> Result<Vec<f64>> {
            if t == "bad" {
                Err(Error::Encoding("boom".into()))
            } else {
                Ok(vec![1.0])
            }
        };
        let out = dedup(&[sample("bad"), sample("ok")], &emb, 0.95).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.removed_count, 1);
        assert_eq!(out.embed_failures, 1);
    }

    #[test]
    fn cutoff_must_be_in_unit_interval() {
        let e = CharNgramEmbedder::default();
        assert!(dedup(&[], &e, 0.0).is_err());
        assert!(dedup(&[], &e, 1.5).is_err());
    }

    #[test]
    fn diversity_no_shared_ngrams() {
        let v = ngram_diversity_violations(&["abcdef", "uvwxyz"], 4, 1).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn diversity_same_sentence_twice() {
        let v = ngram_diversity_violations(&["abcdef", "abcdef"], 4, 1).unwrap();
        let grams: Vec<_> = v.iter().map(|v| v.ngram.as_str()).collect();
        assert_eq!(grams, vec!["abcd", "bcde", "cdef"]);
        assert!(v.iter().all(|v| v.count == 2 && v.sentence_indices == vec![0, 1]));
    }

    #[test]
    fn diversity_shared_phrase_in_three_sentences() {
        let s = ["我们需要机器学习模型", "熟悉机器学习模型优先", "机器学习模型经验丰富"];
        let v = ngram_diversity_violations(&s, 4, 2).unwrap();
        let grams: Vec<_> = v.iter().map(|v| v.ngram.as_str()).collect();
        assert_eq!(grams, vec!["机器学习", "器学习模", "学习模型"]);
        assert!(v.iter().all(|v| v.count == 3));
        assert!(ngram_diversity_violations(&s, 1, 2).is_err());
    }

    #[test]
    fn drops_leave_no_violation() {
        let s = ["abcdx", "abcdy", "abcdz", "qabcd", "zzzz"];
        let v = ngram_diversity_violations(&s, 4, 2).unwrap();
        let drops = violation_drops(&v, 2);
        let rest: Vec<&str> = s
            .iter()
            .enumerate()
            .filter(|(i, _)| !drops.contains(i))
            .map(|(_, t)| *t)
            .collect();
        assert!(ngram_diversity_violations(&rest, 4, 2).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(texts in proptest::collection::vec("[ab甲乙丙]{1,6}", 0..12)) {
            let samples: Vec<_> = texts.iter().map(|t| sample(t)).collect();
            let e = CharNgramEmbedder::default();
            let once = dedup(&samples, &e, 0.9).unwrap();
            prop_assert_eq!(once.kept.len() + once.removed_count, samples.len());
            let twice = dedup(&once.kept, &e, 0.9).unwrap();
            prop_assert_eq!(twice.removed_count, 0);
            prop_assert_eq!(twice.kept, once.kept);
        }
    }
}
