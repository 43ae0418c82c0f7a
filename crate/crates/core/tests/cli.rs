mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use common::{separable_corpus, write_tsv};
use sentipipe::analyzer::{Analyzer, Prediction};
use sentipipe::corpus::{Dataset, LabelScheme, LabeledExample, Language, Split};
use sentipipe::eval::{EvalReport, Task};
use sentipipe::model::{EncoderKind, ModelConfig, Parameters};
use sentipipe::textproc::{train_bpe, NormalizeOptions, TextPipeline};

fn sentipipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentipipe"))
        .args(args)
        .env("SENTIPIPE_THREADS", "2")
        .output()
        .unwrap()
}

fn sentipipe_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sentipipe"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Ten distinct, clearly labeled tweets.
fn ten_examples() -> Dataset {
    let rows = [
        ("awful terrible day", 0),
        ("i hate this so much", 0),
        ("worst service ever", 0),
        ("meeting moved to monday", 1),
        ("the report is on the table", 1),
        ("train leaves at noon", 1),
        ("weather update for today", 1),
        ("love this so much", 2),
        ("amazing happy news", 2),
        ("best day ever", 2),
    ];
    let examples = rows
        .iter()
        .enumerate()
        .map(|(i, (text, label))| LabeledExample {
            id: format!("t{i}"),
            text: text.to_string(),
            label_index: *label,
        })
        .collect();
    Dataset::new(LabelScheme::Sentiment3, Language::En, Split::Train, examples).unwrap()
}

fn train_small(dir: &Path, data: &Path, extra: &[&str]) -> (PathBuf, Output) {
    let out = dir.join("model.sntp");
    let mut args = vec![
        "train", "--task", "sentiment", "--lang", "en", "--train", s(data), "--out", s(&out),
        "--vocab-size", "120", "--embed-dim", "16", "--heads", "2", "--layers", "1", "--ffn-dim", "32",
        "--max-len", "16", "--dropout", "0",
    ];
    args.extend_from_slice(extra);
    let o = sentipipe(&args);
    (out, o)
}

/// Predicts class 0 for every input.
fn constant_model(path: &Path) {
    let tokenizer = train_bpe(&["some text here", "more text"], 30).unwrap();
    let config = ModelConfig {
        encoder: EncoderKind::LinearBow,
        vocab_size: tokenizer.vocab_size(),
        num_classes: 3,
        embed_dim: 4,
        num_heads: 1,
        num_layers: 1,
        ffn_dim: 4,
        max_len: 16,
        dropout_rate: 0.0,
    };
    let mut params = Parameters::zeros(&config);
    if let Parameters::LinearBow(p) = &mut params {
        p.map.bias[0] = 1.0;
    }
    let pipeline = TextPipeline::new(NormalizeOptions::default(), tokenizer);
    Analyzer::new(Task::Sentiment, Language::En, pipeline, config, params)
        .unwrap()
        .save(path)
        .unwrap();
}

#[test]
fn memorizing_model_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ten.tsv");
    write_tsv(&ten_examples(), &data);
    let (model, o) = train_small(
        dir.path(),
        &data,
        &["--epochs", "40", "--lr", "0.01", "--batch-size", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 40);

    let o = sentipipe(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().next().unwrap(), "micro_f1=1.000 macro_f1=1.000");
}

#[test]
fn constant_predictor_on_balanced_data() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("const.sntp");
    constant_model(&model);
    let data = dir.path().join("balanced.tsv");
    write_tsv(&separable_corpus(30, 3), &data);

    // Every prediction is NEG: accuracy 1/3; NEG has F1 2*10/(20+20) = 1/2,
    // the other classes 0.
    let expected_micro = 10.0 / 30.0;
    let expected_macro = (0.5 + 0.0 + 0.0) / 3.0;

    let o = sentipipe(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o).lines().next().unwrap(),
        format!("micro_f1={expected_micro:.3} macro_f1={expected_macro:.3}")
    );
    assert!(stdout(&o).starts_with("micro_f1=0.333 "));

    let o = sentipipe(&["eval", "--model", s(&model), "--data", s(&data), "--json", "--name", "constant"]);
    assert!(o.status.success());
    let report: EvalReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.model, "constant");
    assert!((report.micro_f1 - expected_micro).abs() < 1e-12);
    assert!((report.macro_f1 - expected_macro).abs() < 1e-12);
    assert!(stderr(&o).contains("micro_f1=0.333"));
}

#[test]
fn eval_rejects_mismatched_task() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("const.sntp");
    constant_model(&model);
    let data = dir.path().join("emotion.tsv");
    std::fs::write(&data, "id\ttext\tlabel\n1\tso scared\tfear\n2\tyay\tjoy\n").unwrap();
    let o = sentipipe(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let sentiment = dir.path().join("sentiment.tsv");
    write_tsv(&separable_corpus(6, 1), &sentiment);
    let o = sentipipe(&["eval", "--model", s(&model), "--data", s(&sentiment), "--task", "emotion"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_missing_files_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    write_tsv(&separable_corpus(6, 1), &data);
    let o = sentipipe(&["eval", "--model", s(&dir.path().join("none.sntp")), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_without_train_file_is_a_usage_error() {
    let o = sentipipe(&["train", "--task", "sentiment", "--lang", "en", "--out", "x.sntp"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--train"));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn train_banner_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("imb.tsv");
    write_tsv(&common::overlapping_corpus([45, 45, 5], 2, "i"), &data);
    let (model, o) = train_small(dir.path(), &data, &["--weighting", "balanced", "--batch-size", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("epochs=5"), "{err}");
    assert!(err.contains("seed=42"), "{err}");
    // N / (K n_c) for counts 45, 45, 5.
    assert!(err.contains("class weights: NEG=0.7037 NEU=0.7037 POS=6.3333"), "{err}");
    assert!(model.is_file());
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mean_loss"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn train_rejects_unknown_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.tsv");
    std::fs::write(&data, "1\tgood\tPOS\n2\tmeh\tMAYBE\n").unwrap();
    let (_, o) = train_small(dir.path(), &data, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    write_tsv(&separable_corpus(40, 9), &data);
    let (model, o) = train_small(dir.path(), &data, &["--epochs", "2"]);
    assert!(o.status.success());
    let first = std::fs::read(&model).unwrap();
    let (model, o) = train_small(dir.path(), &data, &["--epochs", "2"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&model).unwrap(), first);
}

#[test]
fn predict_text_and_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    write_tsv(&separable_corpus(30, 4), &data);
    let (model, o) = train_small(dir.path(), &data, &["--epochs", "1"]);
    assert!(o.status.success());

    let o = sentipipe(&["predict", "--model", s(&model), "--text", ""]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 1);
    let p: Prediction = serde_json::from_str(&lines[0]).unwrap();
    assert!(p.probas.contains_key(&p.label));

    let input = "love it\nthe worst\nmonday meeting\n";
    let o = sentipipe_stdin(&["predict", "--model", s(&model), "--stdin"], input);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    let analyzer = Analyzer::load(&model).unwrap();
    for (line, text) in lines.iter().zip(input.lines()) {
        assert_eq!(line, &analyzer.predict(text).to_json());
    }

    let o = sentipipe(&["predict", "--model", s(&dir.path().join("nope")), "--text", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn predict_agrees_with_eval_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    let ds = separable_corpus(30, 5);
    write_tsv(&ds, &data);
    let (model, o) = train_small(dir.path(), &data, &["--epochs", "2"]);
    assert!(o.status.success());

    let input: String = ds.texts().map(|t| format!("{t}\n")).collect();
    let o = sentipipe_stdin(&["predict", "--model", s(&model), "--stdin"], &input);
    let labels = LabelScheme::Sentiment3.labels();
    let mut counts = vec![vec![0u64; 3]; 3];
    for (line, ex) in stdout(&o).lines().zip(ds.examples()) {
        let p: Prediction = serde_json::from_str(line).unwrap();
        let pred = labels.iter().position(|l| *l == p.label).unwrap();
        counts[ex.label_index][pred] += 1;
    }

    let o = sentipipe(&["eval", "--model", s(&model), "--data", s(&data), "--json"]);
    let report: EvalReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.confusion.unwrap().rows(), counts.as_slice());
}

#[test]
fn stats_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    write_tsv(&common::overlapping_corpus([5, 3, 2], 1, "s"), &data);
    let o = sentipipe(&["stats", "--task", "sentiment", "--lang", "en", "--data", s(&data), "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 10);
    assert_eq!(v["per_class"], serde_json::json!([5, 3, 2]));
}

#[test]
fn bench_empty_directory_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = sentipipe(&["bench", "--reports", s(dir.path())]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(stdout(&o).starts_with("| lang | model |"));
}

#[test]
fn bench_malformed_report_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let o = sentipipe(&["bench", "--reports", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.json"));
}

#[test]
fn bench_writes_markdown_file() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_reports");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.md");
    let o = sentipipe(&["bench", "--reports", s(&fixtures), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = std::fs::read_to_string(&out).unwrap();
    assert_eq!(md.lines().count(), 2 + 8);
    assert!(md.contains("| es | beto | **0.672** | **0.667** | **0.688** | **0.548** |"), "{md}");
}

#[test]
fn bad_thread_setting_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_sentipipe"))
        .args(["bench", "--reports", "."])
        .env("SENTIPIPE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
