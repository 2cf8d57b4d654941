use super::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn segmentation_examples() {
    assert_eq!(segment_posting("负责开发。要求本科！"), vec!["负责开发", "要求本科"]);
    assert!(segment_posting("").is_empty());
    assert_eq!(segment_posting("A?B。。C"), vec!["A", "B", "C"]);
    assert_eq!(segment_posting("一．二.三？"), vec!["一", "二", "三"]);
}

#[test]
fn threshold_rule_on_worked_example() {
    // Candidates {0, 0.4, 0.6, 0.8, 0.9}:
    //   τ=0.9 P=1 R=1/3   τ=0.8 P=1 R=2/3   τ=0.6 P=1 R=1
    //   τ=0.4 P=3/4 R=1   τ=0   P=3/4 R=1
    // Qualifying (R ≥ 0.66): 0.8, 0.6, 0.4, 0. Best precision 1 at 0.8
    // and 0.6; the higher-recall tie-break selects 0.6.
    let c = select_threshold(&[0.9, 0.8, 0.6, 0.4], &[true, true, true, false], 0.66).unwrap();
    assert_eq!(c.tau, 0.6);
    assert_eq!((c.precision, c.recall, c.constraint_met), (1.0, 1.0, true));
}

#[test]
fn threshold_on_separated_scores_and_zero_floor() {
    let c = select_threshold(&[0.9, 0.7, 0.3, 0.1], &[true, true, false, false], 1.0).unwrap();
    assert_eq!((c.tau, c.precision), (0.7, 1.0));
    let c = select_threshold(&[0.9, 0.5, 0.3], &[true, false, true], 0.0).unwrap();
    assert_eq!((c.tau, c.precision), (0.9, 1.0));
}

#[test]
fn threshold_falls_back_to_max_recall() {
    let c = select_threshold(&[0.9, 0.2], &[true, false], 1.1).unwrap();
    assert!(!c.constraint_met);
    assert_eq!(c.recall, 1.0);
    assert_eq!(c.tau, 0.0);
    assert!(select_threshold(&[0.5], &[false], 0.5).is_err());
}

/// Independent oracle: every candidate scored from scratch, the best chosen
/// by an explicit lexicographic key.
fn oracle(scores: &[f64], labels: &[bool], min_recall: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut cands: Vec<f64> = scores.iter().copied().chain([0.0]).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let stats: Vec<(f64, f64, f64)> = cands
        .iter()
        .map(|&t| {
            let kept: Vec<bool> = scores
                .iter()
                .zip(labels)
                .filter(|(s, _)| **s >= t)
                .map(|(_, l)| *l)
                .collect();
            let tp = kept.iter().filter(|&&l| l).count() as f64;
            let p = if kept.is_empty() { 0.0 } else { tp / kept.len() as f64 };
            (t, p, tp / pos)
        })
        .collect();
    let ok: Vec<&(f64, f64, f64)> = stats.iter().filter(|s| s.2 >= min_recall).collect();
    if ok.is_empty() {
        let best_r = stats.iter().map(|s| s.2).fold(0.0, f64::max);
        return stats.iter().find(|s| s.2 == best_r).unwrap().0;
    }
    let best_p = ok.iter().map(|s| s.1).fold(0.0, f64::max);
    let top: Vec<_> = ok.iter().filter(|s| s.1 == best_p).collect();
    let best_r = top.iter().map(|s| s.2).fold(0.0, f64::max);
    top.iter().filter(|s| s.2 == best_r).map(|s| s.0).fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn threshold_matches_enumeration(
        raw in proptest::collection::vec((0u8..10, any::<bool>()), 1..12),
        min_recall in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 10.0).collect();
        let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        labels[0] = true;
        let c = select_threshold(&scores, &labels, min_recall).unwrap();
        prop_assert_eq!(c.tau, oracle(&scores, &labels, min_recall));
        prop_assert!(c.tau == 0.0 || scores.contains(&c.tau));
    }
}

fn separable(seed: u64, n: usize) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler: Vec<char> = "公司地址位于市中心交通便利环境优美福利待遇".chars().collect();
    let mut sentence = |marker: &str| {
        let body: String = (0..8).map(|_| filler[rng.gen_range(0..filler.len())]).collect();
        format!("{body}{marker}")
    };
    let pos = (0..n).map(|_| sentence("熟练掌握")).collect();
    let neg = (0..n).map(|_| sentence("")).collect();
    (pos, neg)
}

#[test]
fn separable_classes_are_learned() {
    let (pos, neg) = separable(1, 200);
    let model = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
    let (tp, tn) = separable(2, 100);
    let correct = model.scores(&tp).iter().filter(|&&s| s >= 0.5).count()
        + model.scores(&tn).iter().filter(|&&s| s < 0.5).count();
    assert!(correct as f64 / 200.0 >= 0.95, "accuracy {}", correct as f64 / 200.0);
    let choice = model.metadata.threshold.unwrap();
    assert!(choice.constraint_met);
}

#[test]
fn identical_classes_give_chance_accuracy() {
    let (pos, _) = separable(3, 200);
    let model = train_filter(&pos, &pos, &FilterConfig::default()).unwrap();
    // The same probe texts labeled both ways: any scorer is right half the time.
    let (probe, _) = separable(4, 100);
    let predicted: Vec<bool> = model.scores(&probe).iter().map(|&s| s >= model.threshold()).collect();
    let correct = predicted.iter().filter(|&&p| p).count() + predicted.iter().filter(|&&p| !p).count();
    let acc = correct as f64 / (2 * probe.len()) as f64;
    assert!((acc - 0.5).abs() <= 0.1);
}

#[test]
fn training_is_deterministic_and_needs_both_classes() {
    let (pos, neg) = separable(5, 50);
    let a = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
    let b = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
    assert_eq!(a, b);
    let empty: Vec<String> = Vec::new();
    assert!(train_filter(&pos, &empty, &FilterConfig::default()).is_err());
}

#[test]
fn apply_filter_boundaries() {
    let (pos, neg) = separable(6, 50);
    let mut model = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
    let all: Vec<String> = pos.iter().chain(&neg).cloned().collect();
    model.set_threshold(0.0).unwrap();
    assert_eq!(apply_filter(&model, &all), all);
    model.set_threshold(1.0).unwrap();
    assert!(apply_filter(&model, &all).is_empty());
    assert!(model.set_threshold(1.5).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let (pos, neg) = separable(7, 50);
    let model = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
    let back = FilterModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.scores(&pos), model.scores(&pos));
}

#[test]
fn keyword_baseline_examples() {
    let lex = ["经验", "熟悉"];
    assert_eq!(keyword_baseline(&["熟悉Java", "地址在市中心"], &lex), vec![true, false]);
    assert!(keyword_baseline::<&str>(&[], &lex).is_empty());
}

#[test]
fn labeled_sentences_use_integer_labels() {
    let row = LabeledSentence { text: "熟悉Java".into(), label: true };
    assert_eq!(serde_json::to_string(&row).unwrap(), r#"{"text":"熟悉Java","label":1}"#);
    assert!(serde_json::from_str::<LabeledSentence>(r#"{"text":"a","label":2}"#).is_err());
}

proptest! {
    #[test]
    fn segments_are_nonempty_and_delimiter_free(text in "[a-z数据。．.！!？? ]{0,40}") {
        for s in segment_posting(&text) {
            prop_assert!(!s.trim().is_empty());
            prop_assert!(!s.contains(DELIMITERS));
        }
    }

    #[test]
    fn raising_tau_never_grows_the_kept_set(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (pos, neg) = separable(8, 30);
        let mut model = train_filter(&pos, &neg, &FilterConfig::default()).unwrap();
        let all: Vec<String> = pos.iter().chain(&neg).cloned().collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        model.set_threshold(lo).unwrap();
        let a = apply_filter(&model, &all);
        model.set_threshold(hi).unwrap();
        let b = apply_filter(&model, &all);
        prop_assert!(b.iter().all(|s| a.contains(s)));
    }
}
