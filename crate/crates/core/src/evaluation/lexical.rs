//! TF-IDF and BM25 retrieval over character n-grams (n = 2..4).

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::text::char_ngrams;

pub const NGRAM_MIN: usize = 2;
pub const NGRAM_MAX: usize = 4;
pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

/// Ranked `(skill_id, score)` lists, one per query.
pub type RankedLists = Vec<Vec<(String, f64)>>;

fn term_counts(text: &str, vocab: &mut HashMap<String, usize>, grow: bool) -> BTreeMap<usize, f64> {
    let mut counts = BTreeMap::new();
    for g in char_ngrams(text, NGRAM_MIN, NGRAM_MAX) {
        let id = match vocab.get(&g) {
            Some(&id) => id,
            None if grow => {
                let id = vocab.len();
                vocab.insert(g, id);
                id
            }
            None => continue,
        };
        *counts.entry(id).or_insert(0.0) += 1.0;
    }
    counts
}

/// Sorts by descending score with ascending id as tie-break and keeps `k`.
fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn check_inputs(sentences: &[String], skills: &[(String, String)], k: usize) -> Result<()> {
    if sentences.is_empty() || skills.is_empty() {
        return Err(Error::invalid("lexical baselines need sentences and skill texts"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

/// TF-IDF cosine retrieval. IDF is fit on the union of sentences and skill
/// texts with the smoothed form `ln((1 + N) / (1 + df)) + 1`.
pub fn tfidf_baseline(sentences: &[String], skills: &[(String, String)], k: usize) -> Result<RankedLists> {
    check_inputs(sentences, skills, k)?;
    let mut vocab = HashMap::new();
    let skill_tf: Vec<_> = skills.iter().map(|(_, t)| term_counts(t, &mut vocab, true)).collect();
    let sent_tf: Vec<_> = sentences.iter().map(|t| term_counts(t, &mut vocab, true)).collect();
    if vocab.is_empty() {
        return Err(Error::invalid("empty n-gram vocabulary"));
    }
    let mut df = vec![0.0; vocab.len()];
    for doc in skill_tf.iter().chain(&sent_tf) {
        for &id in doc.keys() {
            df[id] += 1.0;
        }
    }
    let n = (skill_tf.len() + sent_tf.len()) as f64;
    let idf: Vec<f64> = df.iter().map(|d| ((1.0 + n) / (1.0 + d)).ln() + 1.0).collect();
    let weigh = |doc: &BTreeMap<usize, f64>| {
        let mut v: BTreeMap<usize, f64> = doc.iter().map(|(&id, &tf)| (id, tf * idf[id])).collect();
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|x| *x /= norm);
        }
        v
    };
    let skill_vecs: Vec<_> = skill_tf.iter().map(weigh).collect();
    Ok(sent_tf
        .iter()
        .map(|doc| {
            let q = weigh(doc);
            let scored = skills
                .iter()
                .zip(&skill_vecs)
                .map(|((id, _), s)| {
                    let sim: f64 = q.iter().filter_map(|(t, w)| s.get(t).map(|x| w * x)).sum();
                    (id.clone(), sim + 0.0)
                })
                .collect();
            top_k(scored, k)
        })
        .collect())
}

/// Okapi BM25 with skill texts as documents. IDF is
/// `max(0, ln((N − df + 0.5) / (df + 0.5)))`.
pub fn bm25_baseline(sentences: &[String], skills: &[(String, String)], k: usize) -> Result<RankedLists> {
    check_inputs(sentences, skills, k)?;
    let mut vocab = HashMap::new();
    let docs: Vec<_> = skills.iter().map(|(_, t)| term_counts(t, &mut vocab, true)).collect();
    if vocab.is_empty() {
        return Err(Error::invalid("empty n-gram vocabulary"));
    }
    let mut df = vec![0.0; vocab.len()];
    for doc in &docs {
        for &id in doc.keys() {
            df[id] += 1.0;
        }
    }
    let n = docs.len() as f64;
    let idf: Vec<f64> = df
        .iter()
        .map(|d| ((n - d + 0.5) / (d + 0.5)).ln().max(0.0))
        .collect();
    let lens: Vec<f64> = docs.iter().map(|d| d.values().sum()).collect();
    let avg_len = lens.iter().sum::<f64>() / n;
    Ok(sentences
        .iter()
        .map(|s| {
            let query = term_counts(s, &mut vocab, false);
            let scored = skills
                .iter()
                .zip(&docs)
                .zip(&lens)
                .map(|(((id, _), doc), &len)| {
                    let score: f64 = query
                        .keys()
                        .filter_map(|t| {
                            let tf = *doc.get(t)?;
                            let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * len / avg_len);
                            Some(idf[*t] * tf * (BM25_K1 + 1.0) / (tf + norm))
                        })
                        .sum();
                    // `+ 0.0` turns the empty sum's -0.0 into 0.0.
                    (id.clone(), score + 0.0)
                })
                .collect();
            top_k(scored, k)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skills(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn exact_match_ranks_first() {
        let s = skills(&[("a", "数据分析能力"), ("b", "软件开发技能"), ("c", "项目管理经验")]);
        for f in [tfidf_baseline, bm25_baseline] {
            let out = f(&["软件开发技能".to_string()], &s, 3).unwrap();
            assert_eq!(out[0][0].0, "b");
        }
    }

    #[test]
    fn no_overlap_falls_back_to_id_order() {
        let s = skills(&[("b", "数据分析"), ("a", "软件开发")]);
        let out = tfidf_baseline(&["完全无关".to_string()], &s, 2).unwrap();
        assert_eq!(out[0], vec![("a".to_string(), 0.0), ("b".to_string(), 0.0)]);
    }

    #[test]
    fn tfidf_prefers_the_skill_sharing_ngrams() {
        // Corpus {A: "数据分析", B: "软件开发", q: "数据处理"}: only "数据"
        // is shared, and only with A, so sim(q, B) = 0 < sim(q, A).
        let s = skills(&[("A", "数据分析"), ("B", "软件开发")]);
        let out = tfidf_baseline(&["数据处理".to_string()], &s, 2).unwrap();
        assert_eq!(out[0][0].0, "A");
        assert!(out[0][0].1 > 0.0);
        assert_eq!(out[0][1].1, 0.0);
    }

    #[test]
    fn tfidf_hand_value() {
        // Grams: A={ab}, B={cd}, q={ab}; df(ab)=2, df(cd)=1 over N=3. Both
        // A and q are the single term "ab", so cosine is exactly 1.
        let s = skills(&[("A", "ab"), ("B", "cd")]);
        let out = tfidf_baseline(&["ab".to_string()], &s, 2).unwrap();
        assert!((out[0][0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bm25_length_normalization() {
        // "xy" occurs once in A (short) and once in B (long); three filler
        // documents keep its idf positive. A must outscore B, and unrelated
        // documents score exactly zero.
        let s = skills(&[
            ("A", "xy"),
            ("B", "xy一二三四五六七八"),
            ("C", "甲乙"),
            ("D", "丙丁"),
            ("E", "戊己"),
        ]);
        let out = bm25_baseline(&["xy".to_string()], &s, 5).unwrap();
        assert_eq!(out[0][0].0, "A");
        assert_eq!(out[0][1].0, "B");
        assert!(out[0][0].1 > out[0][1].1);
        assert_eq!(out[0][2], ("C".to_string(), 0.0));
        // Hand value: N=5, df=2 → idf = ln(3.5/2.5); |A| = 1 gram ("xy"),
        // avg length = (1 + (9+8+7) + 1 + 1 + 1) / 5.
        let avg = (1.0 + 24.0 + 3.0) / 5.0;
        let expect = 1.4f64.ln() * 2.5 / (1.0 + 1.5 * (0.25 + 0.75 * 1.0 / avg));
        assert!((out[0][0].1 - expect).abs() < 1e-12, "{:?} vs {expect}", out[0]);
    }

    #[test]
    fn unseen_terms_contribute_nothing() {
        let s = skills(&[("A", "数据分析"), ("B", "软件开发"), ("C", "项目管理")]);
        let out = bm25_baseline(&["完全无关".to_string()], &s, 3).unwrap();
        assert!(out[0].iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(tfidf_baseline(&[], &skills(&[("a", "数据")]), 1).is_err());
        assert!(bm25_baseline(&["数据".into()], &[], 1).is_err());
    }
}
