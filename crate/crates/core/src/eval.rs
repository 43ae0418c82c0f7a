//! Confusion matrices, per-class precision/recall/F1, micro and macro F1, and
//! a markdown benchmark table grouped by language.

use std::fmt::Write as _;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LabelScheme, Language};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("golds has {golds} entries but preds has {preds}")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("label index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("classifier scheme {classifier} does not match dataset scheme {dataset}")]
    SchemeMismatch {
        classifier: LabelScheme,
        dataset: LabelScheme,
    },
}

/// `K x K` counts; rows are gold labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&g| g != c)
            .map(|g| self.counts[g][c])
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&p| p != c)
            .map(|p| self.counts[c][p])
            .sum()
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (&g, &p) in golds.iter().zip(preds) {
        if let Some(&index) = [g, p].iter().find(|&&i| i >= k) {
            return Err(EvalError::IndexOutOfRange { index, classes: k });
        }
        m.counts[g][p] += 1;
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, computed from counts as
/// `2TP / (2TP + FP + FN)` to avoid compounding rounding.
fn f1_of(tp: u64, fp: u64, fn_: u64) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Precision, recall and F1 of one class; undefined ratios count as 0.
pub fn per_class_prf(m: &ConfusionMatrix, c: usize) -> (f64, f64, f64) {
    let (tp, fp, fn_) = (m.true_positives(c), m.false_positives(c), m.false_negatives(c));
    (ratio(tp, tp + fp), ratio(tp, tp + fn_), f1_of(tp, fp, fn_))
}

/// F1 over TP/FP/FN pooled across classes.
pub fn micro_f1(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    if m.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = m.num_classes();
    let tp: u64 = (0..k).map(|c| m.true_positives(c)).sum();
    let fp: u64 = (0..k).map(|c| m.false_positives(c)).sum();
    let fn_: u64 = (0..k).map(|c| m.false_negatives(c)).sum();
    Ok(f1_of(tp, fp, fn_))
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    if m.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = m.num_classes();
    Ok((0..k).map(|c| per_class_prf(m, c).2).sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Emotion,
}

impl Task {
    pub fn scheme(&self) -> LabelScheme {
        match self {
            Task::Sentiment => LabelScheme::Sentiment3,
            Task::Emotion => LabelScheme::Emotion7,
        }
    }

    pub fn for_scheme(scheme: LabelScheme) -> Task {
        match scheme {
            LabelScheme::Sentiment3 => Task::Sentiment,
            LabelScheme::Emotion7 => Task::Emotion,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Sentiment => "sentiment",
            Task::Emotion => "emotion",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentiment" => Ok(Task::Sentiment),
            "emotion" => Ok(Task::Emotion),
            other => Err(format!("unknown task {other:?} (sentiment|emotion)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Evaluation of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub language: Language,
    pub model: String,
    pub micro_f1: f64,
    pub macro_f1: f64,
    #[serde(default)]
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

impl EvalReport {
    pub fn from_confusion(
        task: Task,
        language: Language,
        model: impl Into<String>,
        m: ConfusionMatrix,
    ) -> Result<Self, EvalError> {
        let scheme = task.scheme();
        let per_class = (0..m.num_classes())
            .map(|c| {
                let (precision, recall, f1) = per_class_prf(&m, c);
                ClassMetrics {
                    label: scheme.label(c).unwrap_or("?").to_string(),
                    precision,
                    recall,
                    f1,
                    support: m.rows()[c].iter().sum(),
                }
            })
            .collect();
        Ok(EvalReport {
            task,
            language,
            model: model.into(),
            micro_f1: micro_f1(&m)?,
            macro_f1: macro_f1(&m)?,
            per_class,
            confusion: Some(m),
        })
    }

    /// Checks the metric ranges of a report read from disk.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("micro_f1", self.micro_f1), ("macro_f1", self.macro_f1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Human-readable summary: the F1 line followed by a per-class table.
    pub fn render_text(&self) -> String {
        let mut out = format!("micro_f1={:.3} macro_f1={:.3}\n", self.micro_f1, self.macro_f1);
        let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9} {:>8}", "label", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<10} {:>9.3} {:>9.3} {:>9.3} {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        out
    }
}

/// Anything that assigns a label index to raw text.
pub trait TextClassifier: Sync {
    fn scheme(&self) -> LabelScheme;
    fn predict_index(&self, text: &str) -> usize;
}

/// Predicts every example and assembles the report. Prediction runs in
/// parallel; results are kept in input order.
pub fn evaluate<C: TextClassifier + ?Sized>(
    classifier: &C,
    ds: &Dataset,
    model_name: &str,
) -> Result<EvalReport, EvalError> {
    if classifier.scheme() != ds.scheme() {
        return Err(EvalError::SchemeMismatch {
            classifier: classifier.scheme(),
            dataset: ds.scheme(),
        });
    }
    let preds: Vec<usize> = ds
        .examples()
        .par_iter()
        .map(|ex| classifier.predict_index(&ex.text))
        .collect();
    let m = confusion(&ds.labels(), &preds, ds.scheme().num_classes())?;
    EvalReport::from_confusion(Task::for_scheme(ds.scheme()), ds.language(), model_name, m)
}

#[derive(Default)]
struct BenchRow {
    sentiment: Option<(f64, f64)>,
    emotion: Option<(f64, f64)>,
}

/// Markdown table: one block per language (in order of first appearance), one
/// row per model, sentiment and emotion micro/macro F1 columns. The best value
/// of each column within a language block is bold.
pub fn render_benchmark(reports: &[EvalReport]) -> String {
    let mut groups: IndexMap<Language, IndexMap<String, BenchRow>> = IndexMap::new();
    for r in reports {
        let row = groups
            .entry(r.language)
            .or_default()
            .entry(r.model.clone())
            .or_default();
        let cell = Some((r.micro_f1, r.macro_f1));
        match r.task {
            Task::Sentiment => row.sentiment = cell,
            Task::Emotion => row.emotion = cell,
        }
    }

    let mut out = String::new();
    out.push_str("| lang | model | sentiment micro f1 | sentiment macro f1 | emotion micro f1 | emotion macro f1 |\n");
    out.push_str("|------|-------|-------------------:|-------------------:|-----------------:|-----------------:|\n");
    for (lang, rows) in &groups {
        let columns: Vec<Vec<Option<f64>>> = rows
            .values()
            .map(|r| {
                vec![
                    r.sentiment.map(|c| c.0),
                    r.sentiment.map(|c| c.1),
                    r.emotion.map(|c| c.0),
                    r.emotion.map(|c| c.1),
                ]
            })
            .collect();
        // compare at display precision so visually tied values are all bold
        let best: Vec<Option<String>> = (0..4)
            .map(|j| {
                columns
                    .iter()
                    .filter_map(|row| row[j])
                    .max_by(|a, b| a.total_cmp(b))
                    .map(|v| format!("{v:.3}"))
            })
            .collect();
        for (model, cells) in rows.keys().zip(&columns) {
            let _ = write!(out, "| {lang} | {model} |");
            for (j, cell) in cells.iter().enumerate() {
                match cell {
                    Some(v) => {
                        let s = format!("{v:.3}");
                        if best[j].as_deref() == Some(s.as_str()) {
                            let _ = write!(out, " **{s}** |");
                        } else {
                            let _ = write!(out, " {s} |");
                        }
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
    }
    out
}
