use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dss_core::classifier::{
    predict, predict_batch, train, ClassifierConfig, ClassifierError, ModelArtifact, Prediction,
};
use dss_core::corpus_store::{DatasetSplit, Ratios};
use dss_core::synthetic::{annotated_corpus, rotate, separable_corpus, SyntheticSpec};
use dss_core::{CorpusRecord, Label, NctId, Target};

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        yes: 120,
        no: 60,
        undecided: 70,
        agree: 160,
        seed,
        ..Default::default()
    }
}

fn split(corpus: &[CorpusRecord]) -> DatasetSplit {
    DatasetSplit::from_manual_labels(corpus, 42, Ratios::default()).unwrap()
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &[
        "data", "will", "not", "be", "shared", "ipd", "undecided", "available", "request", "study",
        "privacy", "the", "zzz", "éclair", "42", "?",
    ];
    let n = rng.random_range(1..30);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn on_simplex(p: &Prediction) -> bool {
    let sum: f64 = p.scores.iter().sum();
    (sum - 1.0).abs() < 1e-9 && p.scores.iter().all(|s| (0.0..=1.0).contains(s))
}

#[test]
fn baseline_predictions_are_distributions_and_batch_matches_single() {
    let corpus = annotated_corpus(&small_spec(1));
    let artifact = train(&ClassifierConfig::baseline(Target::ManualLabel), &corpus, &split(&corpus)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let texts: Vec<String> = (0..1000).map(|_| random_text(&mut rng)).collect();
    let batch = predict_batch(&artifact, &texts).unwrap();
    assert_eq!(batch.len(), texts.len());
    for (t, b) in texts.iter().zip(&batch) {
        assert!(on_simplex(b));
        assert_eq!(predict(&artifact, t).unwrap(), *b);
    }
}

#[test]
fn baseline_artifact_round_trips() {
    let corpus = annotated_corpus(&small_spec(2));
    let artifact = train(&ClassifierConfig::baseline(Target::OriginalCategory), &corpus, &split(&corpus)).unwrap();
    let mut bytes = Vec::new();
    artifact.write_to(&mut bytes).unwrap();
    let back = ModelArtifact::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.config, artifact.config);
    assert_eq!(back.training_log, artifact.training_log);
    assert_eq!(back.best_epoch, artifact.best_epoch);
    assert_eq!(back.split_seed, Some(42));
    let texts: Vec<&str> = corpus.iter().take(50).map(|r| r.dss_text.as_str()).collect();
    assert_eq!(predict_batch(&back, &texts).unwrap(), predict_batch(&artifact, &texts).unwrap());
    assert!(ModelArtifact::read_from(&b"not a model"[..]).is_err());
}

#[test]
fn empty_text_is_rejected() {
    let corpus = annotated_corpus(&small_spec(3));
    let artifact = train(&ClassifierConfig::baseline(Target::ManualLabel), &corpus, &split(&corpus)).unwrap();
    assert!(matches!(predict(&artifact, ""), Err(ClassifierError::EmptyText)));
    assert!(matches!(predict_batch(&artifact, &["fine text", "  "]), Err(ClassifierError::EmptyText)));
}

#[test]
fn unlabeled_records_are_rejected_for_manual_target() {
    let mut corpus = annotated_corpus(&small_spec(4));
    let s = split(&corpus);
    let victim = s.train_ids.iter().next().unwrap().clone();
    corpus.iter_mut().find(|r| r.nct_id == victim).unwrap().manual_label = None;
    let err = train(&ClassifierConfig::baseline(Target::ManualLabel), &corpus, &s).unwrap_err();
    assert!(matches!(err, ClassifierError::UnlabeledRecord { .. }), "{err}");
    // the registry column is always present
    train(&ClassifierConfig::baseline(Target::OriginalCategory), &corpus, &s).unwrap();
}

#[test]
fn empty_segments_are_rejected() {
    let corpus = annotated_corpus(&small_spec(5));
    let all_train = DatasetSplit::from_manual_labels(&corpus, 1, Ratios::new(1.0, 0.0, 0.0).unwrap()).unwrap();
    let err = train(&ClassifierConfig::baseline(Target::ManualLabel), &corpus, &all_train).unwrap_err();
    assert!(matches!(err, ClassifierError::EmptySegment("validation")));
}

#[test]
fn target_selects_the_label_column() {
    let corpus = separable_corpus(30, 11);
    let s = split(&corpus);
    let manual = train(&ClassifierConfig::baseline(Target::ManualLabel), &corpus, &s).unwrap();
    let original = train(&ClassifierConfig::baseline(Target::OriginalCategory), &corpus, &s).unwrap();
    for r in corpus.iter().filter(|r| s.test_ids.contains(&r.nct_id)) {
        let m = predict(&manual, &r.dss_text).unwrap().label;
        let o = predict(&original, &r.dss_text).unwrap().label;
        assert_eq!(Some(m), r.manual_label);
        assert_eq!(o, r.original_category);
        assert_eq!(o, rotate(m));
    }
}

#[test]
fn single_class_corpus_predicts_that_class() {
    let corpus: Vec<CorpusRecord> = (0..40)
        .map(|i| CorpusRecord {
            nct_id: NctId::new(format!("NCT{:08}", i + 1)).unwrap(),
            original_category: Label::No,
            dss_text: format!("IPD will not be shared, reason {i}"),
            first_posted_year: 2020,
            manual_label: Some(Label::No),
            split: None,
        })
        .collect();
    let s = split(&corpus);
    let artifact = train(&ClassifierConfig::baseline(Target::ManualLabel), &corpus, &s).unwrap();
    for text in ["anything at all", "data will be available", "undecided"] {
        assert_eq!(predict(&artifact, text).unwrap().label, Label::No);
    }
    assert!(artifact.training_log.iter().all(|e| e.validation_accuracy == 1.0));
}

#[test]
fn training_is_deterministic() {
    let corpus = annotated_corpus(&small_spec(6));
    let s = split(&corpus);
    let cfg = ClassifierConfig::baseline(Target::ManualLabel);
    let a = train(&cfg, &corpus, &s).unwrap();
    let b = train(&cfg, &corpus, &s).unwrap();
    assert_eq!(a.training_log, b.training_log);
    let mut ab = Vec::new();
    let mut bb = Vec::new();
    a.write_to(&mut ab).unwrap();
    b.write_to(&mut bb).unwrap();
    assert_eq!(ab, bb);
}

#[test]
fn stub_encoder_learns_a_separable_corpus() {
    let corpus = separable_corpus(20, 3);
    let s = split(&corpus);
    let mut cfg = ClassifierConfig::encoder("stub:tiny", Target::ManualLabel);
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 8;
    cfg.max_epochs = 12;
    cfg.patience = 12;
    cfg.max_sequence_tokens = 16;
    let artifact = train(&cfg, &corpus, &s).unwrap();
    let losses: Vec<f64> = artifact.training_log.iter().map(|e| e.train_loss).collect();
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    let test: Vec<&CorpusRecord> = corpus.iter().filter(|r| s.test_ids.contains(&r.nct_id)).collect();
    let texts: Vec<&str> = test.iter().map(|r| r.dss_text.as_str()).collect();
    let preds = predict_batch(&artifact, &texts).unwrap();
    for (r, p) in test.iter().zip(&preds) {
        assert!(on_simplex(p));
        assert_eq!(Some(p.label), r.manual_label);
    }

    let mut bytes = Vec::new();
    artifact.write_to(&mut bytes).unwrap();
    let back = ModelArtifact::read_from(bytes.as_slice()).unwrap();
    let again = predict_batch(&back, &texts).unwrap();
    for (a, b) in preds.iter().zip(&again) {
        assert_eq!(a.label, b.label);
        for k in 0..3 {
            assert!((a.scores[k] - b.scores[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn missing_checkpoint_is_reported_by_name() {
    let corpus = separable_corpus(10, 1);
    let cfg = ClassifierConfig::encoder("no-such-model", Target::ManualLabel);
    let err = train(&cfg, &corpus, &split(&corpus)).unwrap_err();
    match err {
        ClassifierError::CheckpointUnavailable { name, .. } => assert_eq!(name, "no-such-model"),
        other => panic!("unexpected {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn baseline_training_loss_never_increases(seed in any::<u64>()) {
        let corpus = annotated_corpus(&SyntheticSpec { yes: 50, no: 30, undecided: 30, agree: 70, seed, ..Default::default() });
        let mut cfg = ClassifierConfig::baseline(Target::ManualLabel);
        cfg.max_epochs = 5;
        cfg.patience = 5;
        cfg.baseline.steps_per_epoch = 10;
        let artifact = train(&cfg, &corpus, &split(&corpus)).unwrap();
        prop_assert_eq!(artifact.training_log.len(), 5);
        for w in artifact.training_log.windows(2) {
            prop_assert!(w[1].train_loss <= w[0].train_loss + 1e-9, "{:?}", artifact.training_log);
        }
    }
}
