mod common;

use common::{pipeline_for, separable_corpus, tiny_transformer};
use sentipipe::analyzer::{create_analyzer, Analyzer, AnalyzerError, Prediction};
use sentipipe::corpus::{LabelScheme, Language};
use sentipipe::eval::Task;
use sentipipe::model::init_model;
use sentipipe::train::{train, TrainConfig};

fn trained_analyzer() -> Analyzer {
    let ds = separable_corpus(60, 21);
    let pipeline = pipeline_for(&ds, 100);
    let mut config = tiny_transformer(pipeline.tokenizer.vocab_size(), 3);
    config.dropout_rate = 0.1;
    let init = init_model(&config, 8).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (params, _) = train(&config, &init, &ds, &pipeline, &tc, None).unwrap();
    Analyzer::new(Task::Sentiment, Language::En, pipeline, config, params).unwrap()
}

#[test]
fn saved_model_reloads_with_identical_predictions() {
    let analyzer = trained_analyzer();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.sntp");
    analyzer.save(&path).unwrap();
    let loaded = create_analyzer(Task::Sentiment, Language::En, &path).unwrap();
    assert_eq!(loaded, analyzer);
    for text in ["love it", "", "the worst @x https://a.b", "ñ 🙂 new words"] {
        assert_eq!(loaded.predict(text).to_json(), analyzer.predict(text).to_json());
    }
}

#[test]
fn create_analyzer_checks_task_and_language() {
    let analyzer = trained_analyzer();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.sntp");
    analyzer.save(&path).unwrap();
    assert!(matches!(
        create_analyzer(Task::Emotion, Language::En, &path),
        Err(AnalyzerError::TaskMismatch { .. })
    ));
    assert!(matches!(
        create_analyzer(Task::Sentiment, Language::Es, &path),
        Err(AnalyzerError::LanguageMismatch { .. })
    ));
    assert!(matches!(
        create_analyzer(Task::Sentiment, Language::En, dir.path().join("missing.sntp")),
        Err(AnalyzerError::ModelNotFound(_))
    ));
    std::fs::write(dir.path().join("junk.sntp"), b"not a model").unwrap();
    assert!(matches!(
        create_analyzer(Task::Sentiment, Language::En, dir.path().join("junk.sntp")),
        Err(AnalyzerError::FormatError(_))
    ));
}

#[test]
fn batch_matches_single_predictions_in_order() {
    let analyzer = trained_analyzer();
    let texts: Vec<String> = (0..40).map(|i| format!("text {i} love hate {}", "x".repeat(i))).collect();
    let batch = analyzer.predict_batch(&texts);
    let single: Vec<Prediction> = texts.iter().map(|t| analyzer.predict(t)).collect();
    assert_eq!(batch, single);
}

#[test]
fn probabilities_cover_the_label_set() {
    let analyzer = trained_analyzer();
    let p = analyzer.predict("amazing happy day");
    let labels: Vec<&str> = p.probas.keys().map(String::as_str).collect();
    assert_eq!(labels, ["NEG", "NEU", "POS"]);
    assert!((p.probas.values().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(p.probas.values().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn label_is_invariant_to_logit_shift() {
    let analyzer = trained_analyzer();
    for text in ["love", "hate it", "monday meeting"] {
        let logits = analyzer.logits(text);
        let base = Prediction::from_logits(LabelScheme::Sentiment3, &logits);
        for shift in [-50.0, -1.5, 3.0, 200.0] {
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let p = Prediction::from_logits(LabelScheme::Sentiment3, &shifted);
            assert_eq!(p.label, base.label);
            for (a, b) in p.probas.values().zip(base.probas.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn concurrent_predictions_agree() {
    let analyzer = trained_analyzer();
    let expected = analyzer.predict("great meeting today").to_json();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|_| s.spawn(|| analyzer.predict("great meeting today").to_json()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}
