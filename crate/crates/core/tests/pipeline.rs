use skillforge::encoder::{BiEncoderModel, EncoderConfig};
use skillforge::evaluation::{holdout_split, mrr, rank_all};
use skillforge::filter::{train_filter, FilterConfig};
use skillforge::index::{build_index, load_index, predict_postings, save_index, RetrievalParams};
use skillforge::syngen::{build_dataset, StubClient, SyntheticDataset, VariantCounts};
use skillforge::text::CharNgramEmbedder;
use skillforge::toy::{toy_build_config, toy_postings, toy_taxonomy};
use skillforge::trainer::{train, TrainConfig};

fn small_counts() -> VariantCounts {
    VariantCounts {
        single_per_skill: 6,
        multi_constrained_pairs: 10,
        multi_random_pairs: 0,
        multi_per_pair: 2,
        none_total: 40,
        none_per_prompt: 10,
    }
}

#[test]
fn library_pipeline_end_to_end() {
    let tax = toy_taxonomy(20, 4, 42).unwrap();
    let mut build = toy_build_config(42);
    build.counts = small_counts();
    let client = StubClient::new(42);
    let (data, report) = build_dataset(&tax, &client, &build, &CharNgramEmbedder::default()).unwrap();
    assert!(report.under_represented.is_empty(), "{:?}", report.under_represented);
    assert_eq!(data.d_single().len(), 20 * 6);

    let (train_set, test_set) = holdout_split(&data.samples, 0.2, 42).unwrap();
    let train_cfg = TrainConfig {
        epochs: 12,
        ..TrainConfig::toy()
    };
    let (model, history) = train(
        BiEncoderModel::new(EncoderConfig::toy()).unwrap(),
        &SyntheticDataset::new(train_set),
        &tax,
        &train_cfg,
    )
    .unwrap();
    assert_eq!(history.epochs.len(), 12);
    assert!(history.epochs.last().unwrap().loss < history.epochs[0].loss);

    let held: Vec<_> = test_set.into_iter().filter(|s| !s.skill_ids.is_empty()).collect();
    let score = mrr(&rank_all(&model, &tax, &held).unwrap()).unwrap();
    assert!(score > 0.5, "held-out MRR {score}");

    // Checkpoint and index survive a disk round trip unchanged.
    let dir = tempfile::tempdir().unwrap();
    model.save(&dir.path().join("enc.ckpt")).unwrap();
    let reloaded = BiEncoderModel::load(&dir.path().join("enc.ckpt")).unwrap();
    assert_eq!(reloaded.to_bytes().unwrap(), model.to_bytes().unwrap());
    let index = build_index(&reloaded, &tax).unwrap();
    assert_eq!(index.fingerprint(), &model.fingerprint().unwrap());
    save_index(&index, &dir.path().join("skills.idx")).unwrap();
    let index = load_index(&dir.path().join("skills.idx")).unwrap();

    let positives: Vec<_> = data.samples.iter().filter(|s| !s.skill_ids.is_empty()).cloned().collect();
    let negatives: Vec<_> = data.d_none().into_iter().cloned().collect();
    let filter = train_filter(
        &positives.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        &negatives.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        &FilterConfig::default(),
    )
    .unwrap();
    let postings = toy_postings(&positives, &negatives, 10, 3, 2, 9).unwrap();
    let params = RetrievalParams { budget: 5, gamma: 0.0 };
    let preds = predict_postings(Some(&filter), &reloaded, &index, &postings, filter.threshold(), &params).unwrap();
    assert_eq!(preds.len(), postings.len());
    let mut hits = 0;
    let mut gold_total = 0;
    for (p, g) in preds.iter().zip(&postings) {
        assert_eq!(p.posting_id, g.posting_id);
        gold_total += g.skill_ids.len();
        hits += g.skill_ids.iter().filter(|s| p.skill_ids.contains(s)).count();
    }
    assert!(hits * 2 > gold_total, "recovered {hits} of {gold_total} gold skills");
}

#[test]
fn training_is_bit_reproducible() {
    let tax = toy_taxonomy(10, 2, 5).unwrap();
    let mut build = toy_build_config(5);
    build.counts = small_counts();
    let run = || {
        let (data, _) =
            build_dataset(&tax, &StubClient::new(5), &build, &CharNgramEmbedder::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::toy()
        };
        let (model, _) = train(BiEncoderModel::new(EncoderConfig::toy()).unwrap(), &data, &tax, &cfg).unwrap();
        let index = build_index(&model, &tax).unwrap();
        (model.to_bytes().unwrap(), index.to_bytes())
    };
    assert_eq!(run(), run());
}
