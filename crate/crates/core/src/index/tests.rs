use super::*;
use crate::encoder::EncoderConfig;
use crate::filter::{train_filter, FilterConfig};
use crate::toy::toy_taxonomy;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn index_of(rows: &[&[f64]], ids: &[&str]) -> SkillIndex {
    let dim = rows[0].len();
    let matrix = rows.iter().flat_map(|r| unit(r)).collect();
    SkillIndex::new(ids.iter().map(|s| s.to_string()).collect(), dim, matrix, [0; 32]).unwrap()
}

fn e(v: &[f64]) -> Embedding {
    Embedding::from_unit(v.to_vec()).unwrap()
}

fn params(budget: usize, gamma: f64) -> RetrievalParams {
    RetrievalParams { budget, gamma }
}

fn three() -> SkillIndex {
    index_of(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]], &["s1", "s2", "s3"])
}

fn tiny_model(seed: u64) -> BiEncoderModel {
    BiEncoderModel::new(EncoderConfig {
        hidden_size: 8,
        lstm_hidden: 4,
        attention_dim: 4,
        embed_dim: 6,
        vocab_buckets: 64,
        max_seq_len: 32,
        seed,
        ..EncoderConfig::toy()
    })
    .unwrap()
}

#[test]
fn threshold_after_budget() {
    let out = three().query(&e(&[1.0, 0.0]), &params(2, 0.5)).unwrap();
    assert_eq!(out, vec![("s1".to_string(), 1.0)]);
}

#[test]
fn budget_binds_when_threshold_is_inert() {
    let out = three().query(&e(&[1.0, 0.0]), &params(2, -2.0)).unwrap();
    assert_eq!(out, vec![("s1".to_string(), 1.0), ("s2".to_string(), 0.0)]);
}

#[test]
fn gamma_one_keeps_exact_matches_only() {
    let idx = three();
    assert_eq!(idx.query(&e(&[1.0, 0.0]), &params(3, 1.0)).unwrap().len(), 1);
    let diag = e(&[0.6, 0.8]);
    assert!(idx.query(&diag, &params(3, 1.0)).unwrap().is_empty());
}

#[test]
fn ties_break_by_ascending_id() {
    // Row order deliberately disagrees with id order.
    let idx = index_of(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]], &["zz", "aa", "mm"]);
    let out = idx.query(&e(&[1.0, 0.0]), &params(3, -1.0)).unwrap();
    let ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["aa", "zz", "mm"]);
}

#[test]
fn dimension_mismatch_and_bad_params() {
    let idx = three();
    assert!(matches!(idx.query(&e(&[1.0, 0.0, 0.0]), &params(2, 0.0)), Err(Error::Index(_))));
    assert!(idx.query(&e(&[1.0, 0.0]), &params(0, 0.0)).is_err());
}

#[test]
fn constructor_rejects_bad_rows_and_duplicates() {
    assert!(SkillIndex::new(vec!["a".into()], 2, vec![1.0, 1.0], [0; 32]).is_err());
    assert!(SkillIndex::new(vec!["a".into(), "a".into()], 1, vec![1.0, 1.0], [0; 32]).is_err());
    assert!(SkillIndex::new(vec!["a".into()], 2, vec![1.0], [0; 32]).is_err());
}

#[test]
fn build_index_shape_norm_determinism_and_fingerprint() {
    let tax = toy_taxonomy(3, 1, 5).unwrap();
    let m = tiny_model(1);
    let a = build_index(&m, &tax).unwrap();
    assert_eq!((a.len(), a.dim()), (3, 6));
    for i in 0..3 {
        let n: f64 = a.row(i).iter().map(|&x| (x as f64).powi(2)).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-5);
    }
    assert_eq!(a, build_index(&m, &tax).unwrap());
    let b = build_index(&tiny_model(2), &tax).unwrap();
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn build_index_names_the_failing_skill() {
    let tax = toy_taxonomy(3, 1, 5).unwrap();
    let mut m = tiny_model(1);
    m.tensor_mut("proj.W").unwrap().fill(0.0);
    m.tensor_mut("proj.b").unwrap().fill(0.0);
    let err = build_index(&m, &tax).unwrap_err().to_string();
    assert!(err.contains(&tax.skills()[0].skill_id), "{err}");
}

#[test]
fn save_load_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skills.idx");
    let idx = build_index(&tiny_model(3), &toy_taxonomy(4, 2, 1).unwrap()).unwrap();
    save_index(&idx, &path).unwrap();
    let back = load_index(&path).unwrap();
    assert_eq!(back, idx);
    assert_eq!(back.fingerprint(), idx.fingerprint());

    let bytes = idx.to_bytes();
    assert!(matches!(SkillIndex::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Index(_))));
    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(SkillIndex::from_bytes(&bad), Err(Error::Version { found: 7, .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(SkillIndex::from_bytes(&bad).is_err());
    // Scale the first matrix value so the first row is no longer unit-norm.
    let mut bad = bytes.clone();
    let off = bytes.len() - idx.len() * idx.dim() * 4;
    let v = f32::from_le_bytes(bad[off..off + 4].try_into().unwrap()) * 3.0 + 0.5;
    bad[off..off + 4].copy_from_slice(&v.to_le_bytes());
    assert!(SkillIndex::from_bytes(&bad).is_err());
}

#[test]
fn sentence_equal_to_description_ranks_its_skill_first() {
    let tax = toy_taxonomy(6, 2, 9).unwrap();
    let m = tiny_model(4);
    let idx = build_index(&m, &tax).unwrap();
    for s in tax.skills() {
        let out = predict_sentence(&m, &idx, &s.description, &params(3, -1.0)).unwrap();
        assert_eq!(out[0].0, s.skill_id);
        assert!((out[0].1 - 1.0).abs() < 1e-6);
    }
}

fn toy_filter() -> FilterModel {
    let pos = ["熟悉数据分析", "掌握软件开发", "具备项目管理能力", "精通统计建模"];
    let neg = ["公司地址在北京", "薪资面议", "五险一金", "周末双休"];
    let cfg = FilterConfig {
        validation_fraction: 0.25,
        ..FilterConfig::default()
    };
    train_filter(&pos, &neg, &cfg).unwrap()
}

#[test]
fn posting_union_and_empty_cases() {
    let tax = toy_taxonomy(6, 2, 9).unwrap();
    let m = tiny_model(4);
    let idx = build_index(&m, &tax).unwrap();
    let d0 = &tax.skills()[0].description;
    let d1 = &tax.skills()[1].description;
    let p = params(2, -1.0);

    let one = predict_posting(None, &m, &idx, "p1", d0, 0.0, &p).unwrap();
    let sent = predict_sentence(&m, &idx, d0, &p).unwrap();
    let mut ids: Vec<String> = sent.iter().map(|(id, _)| id.clone()).collect();
    ids.sort();
    assert_eq!(one.skill_ids, ids);

    let text = format!("{d0}。{d1}");
    let both = predict_posting(None, &m, &idx, "p2", &text, 0.0, &p).unwrap();
    assert_eq!(both.per_sentence.len(), 2);
    let union: BTreeSet<String> = both
        .per_sentence
        .iter()
        .flat_map(|s| s.skills.iter().map(|(id, _)| id.clone()))
        .collect();
    assert_eq!(both.skill_ids, union.into_iter().collect::<Vec<_>>());
    let rev = predict_posting(None, &m, &idx, "p2", &format!("{d1}。{d0}"), 0.0, &p).unwrap();
    assert_eq!(rev.skill_ids, both.skill_ids);
    assert_eq!(rev.max_similarity(), both.max_similarity());

    let f = toy_filter();
    let none = predict_posting(Some(&f), &m, &idx, "p3", &text, 1.1, &p).unwrap();
    assert!(none.skill_ids.is_empty() && none.per_sentence.is_empty());
}

#[test]
fn prediction_record_schema() {
    let rec = PostingPrediction::from_sentences(
        "p",
        vec![
            SentencePrediction {
                text: "x".into(),
                skills: vec![("A".into(), 0.9), ("B".into(), 0.5)],
            },
            SentencePrediction {
                text: "y".into(),
                skills: vec![("C".into(), 0.7), ("B".into(), 0.8)],
            },
        ],
    );
    assert_eq!(rec.skill_ids, ["A", "B", "C"]);
    assert_eq!(rec.ranked(), ["A", "B", "C"]);
    assert_eq!(rec.max_similarity()["B"], 0.8);
    let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
    assert_eq!(v["per_sentence"][0]["skills"][0], serde_json::json!(["A", 0.9]));
    assert_eq!(v["skill_ids"], serde_json::json!(["A", "B", "C"]));
}

#[test]
fn tune_gamma_finds_constructed_optimum() {
    // One posting, candidates a:0.9, b:0.6, c:0.3, gold {a, b}.
    // γ=0.2 → {a,b,c}: F1 = 0.8; γ=0.5 → {a,b}: F1 = 1; γ=0.8 → {a}: F1 = 2/3.
    let cands = [("a", 0.9), ("b", 0.6), ("c", 0.3)];
    let score = |g: f64| {
        let ranked = cands.iter().filter(|(_, s)| *s >= g).map(|(id, _)| id.to_string()).collect();
        f1_at_k(&[RankedResult::new("q", ranked, ["a".to_string(), "b".to_string()])], 5)
    };
    let got = tune_gamma(&[0.2, 0.5, 0.8], score).unwrap();
    assert_eq!(got.gamma, 0.5);
    assert!((got.f1_at_5 - 1.0).abs() < 1e-12);
    assert!((got.curve[0].1 - 0.8).abs() < 1e-12);
    assert!((got.curve[2].1 - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn tune_gamma_edge_cases() {
    assert_eq!(tune_gamma(&[0.3], |_| Ok(0.4)).unwrap().gamma, 0.3);
    assert_eq!(tune_gamma(&[0.4, 0.1, 0.7], |_| Ok(0.0)).unwrap().gamma, 0.1);
    assert_eq!(tune_gamma(&[0.5, 0.2], |_| Ok(0.6)).unwrap().gamma, 0.2);
    assert!(tune_gamma(&[], |_| Ok(0.0)).is_err());
}

#[test]
fn default_grid() {
    let g = default_gamma_grid();
    assert_eq!(g.len(), 20);
    assert_eq!(g[0], 0.0);
    assert_eq!(g[3], 0.15);
    assert_eq!(g[19], 0.95);
}

#[test]
fn tune_on_postings_matches_manual_evaluation() {
    let tax = toy_taxonomy(6, 2, 9).unwrap();
    let m = tiny_model(4);
    let idx = build_index(&m, &tax).unwrap();
    let s = tax.skills();
    let dev: Vec<GoldPosting> = (0..3)
        .map(|i| GoldPosting {
            posting_id: format!("d{i}"),
            text: format!("{}。{}", s[i].description, s[i + 3].description),
            skill_ids: vec![s[i].skill_id.clone(), s[i + 3].skill_id.clone()],
        })
        .collect();
    let grid = default_gamma_grid();
    let got = tune_gamma_on_postings(None, &m, &idx, &dev, 0.0, 5, &grid).unwrap();
    for &(g, f) in &got.curve {
        let preds = predict_postings(None, &m, &idx, &dev, 0.0, &params(5, g)).unwrap();
        let results: Vec<RankedResult> = dev
            .iter()
            .zip(&preds)
            .map(|(d, p)| RankedResult::new(&d.posting_id, p.ranked(), d.skill_ids.iter().cloned()))
            .collect();
        assert!((f1_at_k(&results, 5).unwrap() - f).abs() < 1e-12);
    }
}

/// Repeated selection of the best remaining row: highest similarity, then
/// smallest id.
fn brute_force(ids: &[String], rows: &[Vec<f32>], q: &[f64], budget: usize, gamma: f64) -> Vec<(String, f64)> {
    let sims: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(q).map(|(&a, b)| a as f64 * b).sum())
        .collect();
    let mut taken = vec![false; ids.len()];
    let mut out = Vec::new();
    for _ in 0..budget.min(ids.len()) {
        let mut best: Option<usize> = None;
        for i in 0..ids.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                Some(b) if sims[b] > sims[i] || (sims[b] == sims[i] && ids[b] < ids[i]) => Some(b),
                _ => Some(i),
            };
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push((ids[b].clone(), sims[b]));
    }
    out.retain(|(_, s)| *s >= gamma);
    out
}

fn random_index(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> (SkillIndex, Vec<Vec<f32>>) {
    let mut rows: Vec<Vec<f32>> = (0..n)
        .map(|_| unit(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()))
        .collect();
    // Force some exact ties.
    for i in (0..n).step_by(7).skip(1) {
        rows[i] = rows[i - 1].clone();
    }
    let mut ids: Vec<String> = (0..n).map(|i| format!("sk{:05}", (i * 7919) % 100_003)).collect();
    ids.reverse();
    let idx = SkillIndex::new(ids, dim, rows.concat(), [1; 32]).unwrap();
    (idx, rows)
}

fn random_query(dim: usize, rng: &mut ChaCha8Rng) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Embedding::normalized(v).unwrap()
}

#[test]
fn query_equals_brute_force_on_1000_skills() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (idx, rows) = random_index(1000, 16, &mut rng);
    for q in 0..100 {
        let e = random_query(16, &mut rng);
        let p = params(1 + q % 60, rng.gen_range(-0.5..0.5));
        assert_eq!(idx.query(&e, &p).unwrap(), brute_force(idx.ids(), &rows, e.as_slice(), p.budget, p.gamma));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_and_budget_monotonicity(seed in any::<u64>(), g1 in -1.0f64..1.0, g2 in -1.0f64..1.0, k1 in 1usize..40, k2 in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (idx, _) = random_index(60, 6, &mut rng);
        let e = random_query(6, &mut rng);
        let (lo, hi) = (g1.min(g2), g1.max(g2));
        let wide = idx.query(&e, &params(k1, lo)).unwrap();
        let narrow = idx.query(&e, &params(k1, hi)).unwrap();
        prop_assert!(narrow.iter().all(|x| wide.contains(x)));
        prop_assert!(narrow.iter().all(|(_, s)| *s >= hi));

        let (ka, kb) = (k1.min(k2), k1.max(k2));
        let short = idx.query(&e, &params(ka, f64::NEG_INFINITY)).unwrap();
        let long = idx.query(&e, &params(kb, f64::NEG_INFINITY)).unwrap();
        prop_assert_eq!(short.len(), ka);
        prop_assert_eq!(&long[..ka], &short[..]);
    }

    #[test]
    fn union_is_order_independent(perm_seed in any::<u64>()) {
        let mut sentences: Vec<SentencePrediction> = (0..5)
            .map(|i| SentencePrediction {
                text: format!("s{i}"),
                skills: vec![(format!("k{}", i % 3), 0.1 * i as f64), (format!("k{}", i + 3), 0.5)],
            })
            .collect();
        let a = PostingPrediction::from_sentences("p", sentences.clone());
        use rand::seq::SliceRandom;
        sentences.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let b = PostingPrediction::from_sentences("p", sentences);
        prop_assert_eq!(&a.skill_ids, &b.skill_ids);
        prop_assert_eq!(a.max_similarity(), b.max_similarity());
    }
}
