//! Ready-to-use analyzers: text in, label and class probabilities out.
//!
//! # Model file layout
//!
//! ```text
//! "SNTP"                      4 bytes magic
//! version                     u16 little-endian (currently 1)
//! header length               u32 little-endian
//! header                      UTF-8 JSON: task, language, labels, normalize
//!                             options, tokenizer document, model config and the
//!                             ordered tensor manifest (name + shape)
//! payload                     every tensor as little-endian f32, manifest order
//! ```
//!
//! Parameters are rounded to `f32` when an analyzer is built, so a saved and
//! reloaded analyzer reproduces every probability bit for bit.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelScheme, Language};
use crate::eval::{Task, TextClassifier};
use crate::model::{
    argmax, forward_example, softmax_vec, tensor_layout, ModelConfig, Parameters, TokenSeq,
};
use crate::textproc::{BpeDocument, BpeModel, NormalizeOptions, TextPipeline};

pub const MAGIC: &[u8; 4] = b"SNTP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("model file not found: {0}")]
    ModelNotFound(String),
    #[error("malformed model file: {0}")]
    FormatError(String),
    #[error("model file version {found} is newer than supported version {supported}")]
    VersionUnsupported { found: u16, supported: u16 },
    #[error("model was trained for {found}, requested {requested}")]
    TaskMismatch { requested: Task, found: Task },
    #[error("model was trained for language {found}, requested {requested}")]
    LanguageMismatch {
        requested: Language,
        found: Language,
    },
    #[error("inconsistent analyzer: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Predicted label with the full probability distribution, in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub probas: IndexMap<String, f64>,
}

impl Prediction {
    /// Softmax over `logits`, label = argmax (lowest index on ties).
    pub fn from_logits(scheme: LabelScheme, logits: &[f64]) -> Prediction {
        let probs = softmax_vec(logits);
        let best = argmax(&probs);
        Prediction {
            label: scheme.labels()[best].to_string(),
            probas: scheme
                .labels()
                .iter()
                .zip(probs)
                .map(|(l, p)| (l.to_string(), p))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prediction serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analyzer {
    task: Task,
    language: Language,
    pipeline: TextPipeline,
    config: ModelConfig,
    params: Parameters,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    task: Task,
    language: Language,
    labels: Vec<String>,
    normalize: NormalizeOptions,
    tokenizer: BpeDocument,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

impl Analyzer {
    /// Assembles an analyzer, rounding the parameters to storage precision.
    pub fn new(
        task: Task,
        language: Language,
        pipeline: TextPipeline,
        config: ModelConfig,
        mut params: Parameters,
    ) -> Result<Analyzer, AnalyzerError> {
        config
            .validate()
            .map_err(|e| AnalyzerError::Invalid(e.to_string()))?;
        pipeline
            .normalize
            .validate()
            .map_err(|e| AnalyzerError::Invalid(e.to_string()))?;
        if config.num_classes != task.scheme().num_classes() {
            return Err(AnalyzerError::Invalid(format!(
                "{task} needs {} classes, model has {}",
                task.scheme().num_classes(),
                config.num_classes
            )));
        }
        if pipeline.tokenizer.vocab_size() > config.vocab_size {
            return Err(AnalyzerError::Invalid(format!(
                "tokenizer vocabulary {} exceeds model vocabulary {}",
                pipeline.tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        let layout: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if layout != tensor_layout(&config) {
            return Err(AnalyzerError::Invalid(
                "parameter shapes do not match the model config".into(),
            ));
        }
        if !params.is_finite() {
            return Err(AnalyzerError::Invalid("non-finite parameter".into()));
        }
        params.round_to_f32();
        Ok(Analyzer {
            task,
            language,
            pipeline,
            config,
            params,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn labels(&self) -> &'static [&'static str] {
        self.task.scheme().labels()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn pipeline(&self) -> &TextPipeline {
        &self.pipeline
    }

    /// Inference-mode logits for raw text.
    pub fn logits(&self, text: &str) -> Vec<f64> {
        let ids = self.pipeline.encode(text, self.config.max_len);
        let (logits, _) = forward_example(&self.params, &self.config, &TokenSeq::from_ids(&ids), None);
        logits.to_vec()
    }

    pub fn predict(&self, text: &str) -> Prediction {
        Prediction::from_logits(self.task.scheme(), &self.logits(text))
    }

    /// Same as mapping [`Analyzer::predict`], computed in parallel.
    pub fn predict_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<Prediction> {
        texts.par_iter().map(|t| self.predict(t.as_ref())).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.params.tensors();
        let header = Header {
            task: self.task,
            language: self.language,
            labels: self.labels().iter().map(|l| l.to_string()).collect(),
            normalize: self.pipeline.normalize.clone(),
            tokenizer: self.pipeline.tokenizer.to_document(),
            config: self.config.clone(),
            tensors: tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload_len: usize = tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(10 + json.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &tensors {
            for &x in t.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Analyzer, AnalyzerError> {
        let format = |m: &str| AnalyzerError::FormatError(m.to_string());
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(format("bad magic bytes"));
        }
        if bytes.len() < 10 {
            return Err(format("truncated preamble"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version > FORMAT_VERSION {
            return Err(AnalyzerError::VersionUnsupported {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if version == 0 {
            return Err(format("version 0 is not a valid format version"));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(format("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| AnalyzerError::FormatError(format!("header: {e}")))?;
        let payload = &body[header_len..];

        if header.labels.iter().map(String::as_str).ne(header.task.scheme().labels().iter().copied()) {
            return Err(format("stored labels do not match the task's label scheme"));
        }
        header
            .config
            .validate()
            .map_err(|e| AnalyzerError::FormatError(e.to_string()))?;
        let expected = tensor_layout(&header.config);
        if header.tensors.len() != expected.len()
            || header
                .tensors
                .iter()
                .zip(&expected)
                .any(|(t, (name, shape))| &t.name != name || &t.shape != shape)
        {
            return Err(format("tensor manifest does not match the model config"));
        }
        let n_values: usize = expected
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum();
        if payload.len() != n_values * 4 {
            return Err(AnalyzerError::FormatError(format!(
                "payload holds {} bytes, manifest needs {}",
                payload.len(),
                n_values * 4
            )));
        }

        let mut params = Parameters::zeros(&header.config);
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        for t in params.tensors_mut() {
            for (dst, src) in t.data.iter_mut().zip(&mut values) {
                *dst = src;
            }
        }
        let tokenizer = BpeModel::from_document(header.tokenizer)
            .map_err(|e| AnalyzerError::FormatError(e.to_string()))?;
        Analyzer::new(
            header.task,
            header.language,
            TextPipeline::new(header.normalize, tokenizer),
            header.config,
            params,
        )
        .map_err(|e| match e {
            AnalyzerError::Invalid(m) => AnalyzerError::FormatError(m),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnalyzerError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Analyzer, AnalyzerError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(AnalyzerError::ModelNotFound(path.display().to_string()));
        }
        Analyzer::from_bytes(&fs::read(path)?)
    }
}

impl TextClassifier for Analyzer {
    fn scheme(&self) -> LabelScheme {
        self.task.scheme()
    }

    fn predict_index(&self, text: &str) -> usize {
        argmax(&self.logits(text))
    }
}

/// Loads the model at `model_path` and checks it serves `task` in `language`.
pub fn create_analyzer(
    task: Task,
    language: Language,
    model_path: impl AsRef<Path>,
) -> Result<Analyzer, AnalyzerError> {
    let analyzer = Analyzer::load(model_path)?;
    if analyzer.task != task {
        return Err(AnalyzerError::TaskMismatch {
            requested: task,
            found: analyzer.task,
        });
    }
    if analyzer.language != language {
        return Err(AnalyzerError::LanguageMismatch {
            requested: language,
            found: analyzer.language,
        });
    }
    Ok(analyzer)
}
