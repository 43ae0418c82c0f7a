//! Labeled tweet datasets: label schemes, TSV loading, split statistics and
//! stratified hold-out carving.
//!
//! The on-disk format is one example per line, `id<TAB>text<TAB>label`, with an
//! optional header row. Labels are matched case-insensitively against the
//! scheme's names plus a small alias table covering the spellings used by the
//! public sentiment and emotion corpora.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset file not found: {0}")]
    MissingFile(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown label {token:?} at line {line}")]
    UnknownLabel { line: usize, token: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The two label schemes the toolkit knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Polarity: `NEG`, `NEU`, `POS`.
    Sentiment3,
    /// Ekman's six basic emotions plus `others`.
    Emotion7,
}

const SENTIMENT_LABELS: [&str; 3] = ["NEG", "NEU", "POS"];
const EMOTION_LABELS: [&str; 7] = [
    "anger", "disgust", "fear", "joy", "sadness", "surprise", "others",
];

impl LabelScheme {
    pub fn labels(&self) -> &'static [&'static str] {
        match self {
            LabelScheme::Sentiment3 => &SENTIMENT_LABELS,
            LabelScheme::Emotion7 => &EMOTION_LABELS,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels().len()
    }

    pub fn name(&self) -> &'static str {
        match self {
            LabelScheme::Sentiment3 => "sentiment3",
            LabelScheme::Emotion7 => "emotion7",
        }
    }

    pub fn label(&self, index: usize) -> Option<&'static str> {
        self.labels().get(index).copied()
    }

    /// Resolves a raw label token to its index, case-insensitively, consulting
    /// the alias table when no canonical name matches.
    pub fn index_of(&self, token: &str) -> Option<usize> {
        let token = token.trim();
        if let Some(i) = self
            .labels()
            .iter()
            .position(|l| l.eq_ignore_ascii_case(token))
        {
            return Some(i);
        }
        let upper = token.to_uppercase();
        match self {
            LabelScheme::Sentiment3 => match upper.as_str() {
                "N" | "NEGATIVE" => Some(0),
                "NONE" | "NEUTRAL" => Some(1),
                "P" | "POSITIVE" => Some(2),
                _ => None,
            },
            LabelScheme::Emotion7 => match upper.as_str() {
                "NEUTRAL" => Some(6),
                _ => None,
            },
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Es,
    En,
}

impl Language {
    pub fn code(&self) -> &'static str {
        match self {
            Language::Es => "es",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "es" => Ok(Language::Es),
            "en" => Ok(Language::En),
            other => Err(format!("unsupported language code {other:?} (expected es or en)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Other,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "other" | "dev" | "heldout" => Ok(Split::Other),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label_index: usize,
}

/// An ordered, validated collection of examples bound to one label scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    scheme: LabelScheme,
    language: Language,
    split: Split,
    examples: Vec<LabeledExample>,
}

impl Dataset {
    /// Builds a dataset, checking label ranges, non-empty text and id uniqueness.
    pub fn new(
        scheme: LabelScheme,
        language: Language,
        split: Split,
        examples: Vec<LabeledExample>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.label_index >= scheme.num_classes() {
                return Err(CorpusError::InvalidExample(format!(
                    "label index {} out of range for {scheme} in example {:?}",
                    ex.label_index, ex.id
                )));
            }
            if ex.text.trim().is_empty() {
                return Err(CorpusError::InvalidExample(format!(
                    "empty text in example {:?}",
                    ex.id
                )));
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Dataset {
            scheme,
            language,
            split,
            examples,
        })
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label_index).collect()
    }

    /// Appends another dataset of the same scheme and language; ids must stay unique.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, CorpusError> {
        if self.scheme != other.scheme || self.language != other.language {
            return Err(CorpusError::InvalidExample(
                "cannot concatenate datasets with different scheme or language".into(),
            ));
        }
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Dataset::new(self.scheme, self.language, Split::Other, examples)
    }
}

/// Loads a `id<TAB>text<TAB>label` file.
pub fn load_dataset(
    path: impl AsRef<Path>,
    scheme: LabelScheme,
    language: Language,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.display().to_string()));
    }
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let content = String::from_utf8(bytes).map_err(|e| CorpusError::MalformedRow {
        line: 0,
        reason: format!("file is not valid UTF-8: {e}"),
    })?;
    parse_tsv(&content, scheme, language, split)
}

/// Parses TSV content already in memory. Line numbers in errors are 1-based.
pub fn parse_tsv(
    content: &str,
    scheme: LabelScheme,
    language: Language,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let content = content.strip_prefix('\u{feff}').unwrap_or(content);
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    let mut first_row = true;

    for (idx, raw) in content.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let (id, text, label) = (cols[0].trim(), cols[1], cols[2].trim());
        let is_first = std::mem::replace(&mut first_row, false);
        let label_index = match scheme.index_of(label) {
            Some(i) => i,
            // header row
            None if is_first => continue,
            None => {
                return Err(CorpusError::UnknownLabel {
                    line: line_no,
                    token: label.to_string(),
                })
            }
        };
        if id.is_empty() {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if text.trim().is_empty() {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                reason: "empty text".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        examples.push(LabeledExample {
            id: id.to_string(),
            text: text.to_string(),
            label_index,
        });
    }

    Ok(Dataset {
        scheme,
        language,
        split,
        examples,
    })
}

/// Per-class counts of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scheme: LabelScheme,
    pub total: usize,
    pub per_class: Vec<usize>,
    pub per_class_fraction: Vec<f64>,
}

impl DatasetStats {
    pub fn from_counts(scheme: LabelScheme, per_class: Vec<usize>) -> Self {
        let total: usize = per_class.iter().sum();
        let per_class_fraction = per_class
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        DatasetStats {
            scheme,
            total,
            per_class,
            per_class_fraction,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scheme: {}", self.scheme)?;
        writeln!(f, "total: {}", self.total)?;
        for (i, label) in self.scheme.labels().iter().enumerate() {
            writeln!(
                f,
                "{label:<10} {:>8} {:>8.4}",
                self.per_class[i], self.per_class_fraction[i]
            )?;
        }
        Ok(())
    }
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut counts = vec![0usize; ds.scheme.num_classes()];
    for ex in &ds.examples {
        counts[ex.label_index] += 1;
    }
    DatasetStats::from_counts(ds.scheme, counts)
}

/// Splits off a held-out part with the same class proportions.
///
/// Each class contributes `round(count * fraction)` examples (half away from
/// zero); the largest class then absorbs the difference to the global target
/// `round(len * fraction)`. Both outputs keep the input order.
pub fn stratified_split(ds: &Dataset, heldout_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    assert!(
        (0.0..=1.0).contains(&heldout_fraction),
        "heldout_fraction must lie in [0, 1]"
    );
    let k = ds.scheme.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, ex) in ds.examples.iter().enumerate() {
        by_class[ex.label_index].push(i);
    }

    let targets = stratified_targets(
        &by_class.iter().map(Vec::len).collect::<Vec<_>>(),
        heldout_fraction,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heldout = vec![false; ds.len()];
    for (members, &take) in by_class.iter_mut().zip(&targets) {
        members.shuffle(&mut rng);
        for &i in members.iter().take(take) {
            heldout[i] = true;
        }
    }

    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for (ex, &h) in ds.examples.iter().zip(&heldout) {
        if h {
            held.push(ex.clone())
        } else {
            kept.push(ex.clone())
        }
    }
    (
        Dataset {
            examples: kept,
            ..ds.clone_header()
        },
        Dataset {
            examples: held,
            split: Split::Other,
            ..ds.clone_header()
        },
    )
}

/// Per-class held-out counts for [`stratified_split`].
pub fn stratified_targets(class_counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = class_counts.iter().sum();
    let mut targets: Vec<usize> = class_counts
        .iter()
        .map(|&n| ((n as f64 * fraction).round() as usize).min(n))
        .collect();
    let global = ((total as f64 * fraction).round() as usize).min(total);

    // Largest class first; ties go to the lowest index.
    let mut order: Vec<usize> = (0..class_counts.len()).collect();
    order.sort_by(|&a, &b| class_counts[b].cmp(&class_counts[a]).then(a.cmp(&b)));

    let mut assigned: usize = targets.iter().sum();
    while assigned < global {
        let Some(&c) = order.iter().find(|&&c| targets[c] < class_counts[c]) else {
            break;
        };
        targets[c] += 1;
        assigned += 1;
    }
    while assigned > global {
        let Some(&c) = order.iter().find(|&&c| targets[c] > 0) else {
            break;
        };
        targets[c] -= 1;
        assigned -= 1;
    }
    targets
}

impl Dataset {
    fn clone_header(&self) -> Dataset {
        Dataset {
            scheme: self.scheme,
            language: self.language,
            split: self.split,
            examples: Vec::new(),
        }
    }
}
