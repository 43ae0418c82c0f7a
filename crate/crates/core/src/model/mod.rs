//! Text classifiers: a small pre-norm transformer encoder with mean pooling
//! and a linear head, and a linear bag-of-tokens baseline.

mod encoder;
mod params;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{backward_example, forward_example, ExampleCache, TokenSeq};
pub use params::{
    init_model, tensor_layout, BowParams, EncoderLayer, LayerNorm, Linear, Parameters,
    TensorMut, TensorRef, TransformerParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Transformer,
    LinearBow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.encoder == EncoderKind::Transformer {
            if self.embed_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
                return bad("embed_dim, num_heads and ffn_dim must be positive".into());
            }
            if !self.embed_dim.is_multiple_of(self.num_heads) {
                return bad(format!(
                    "embed_dim {} not divisible by num_heads {}",
                    self.embed_dim, self.num_heads
                ));
            }
        }
        Ok(())
    }

    /// Total trainable scalars implied by the shapes.
    pub fn num_parameters(&self) -> usize {
        let (v, d, k, f) = (self.vocab_size, self.embed_dim, self.num_classes, self.ffn_dim);
        match self.encoder {
            EncoderKind::LinearBow => v * k + k,
            EncoderKind::Transformer => {
                let layer = 2 * (2 * d) + 4 * (d * d + d) + (d * f + f) + (f * d + d);
                v * d + self.max_len * d + self.num_layers * layer + 2 * d + d * k + k
            }
        }
    }
}

/// Whether dropout is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training,
}

/// Token ids padded to a common width, with `true` marking real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Array2<u32>,
    pub mask: Array2<bool>,
}

impl Batch {
    /// Right-pads id sequences with `PAD` to the longest one.
    pub fn from_sequences(seqs: &[Vec<u32>]) -> Batch {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Array2::from_elem((seqs.len(), width), crate::textproc::PAD_ID);
        let mut mask = Array2::from_elem((seqs.len(), width), false);
        for (i, s) in seqs.iter().enumerate() {
            for (j, &id) in s.iter().enumerate() {
                ids[[i, j]] = id;
                mask[[i, j]] = true;
            }
        }
        Batch { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.nrows() == 0
    }

    /// Non-pad tokens of row `i` with their positions.
    pub fn row(&self, i: usize) -> TokenSeq {
        let mut seq = TokenSeq::default();
        for (j, (&id, &keep)) in self.ids.row(i).iter().zip(self.mask.row(i)).enumerate() {
            if keep {
                seq.ids.push(id);
                seq.positions.push(j);
            }
        }
        seq
    }

    fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        if self.ids.dim() != self.mask.dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "ids {:?} vs mask {:?}",
                self.ids.dim(),
                self.mask.dim()
            )));
        }
        if self.ids.ncols() > config.max_len {
            return Err(ModelError::ShapeMismatch(format!(
                "batch width {} exceeds max_len {}",
                self.ids.ncols(),
                config.max_len
            )));
        }
        if let Some(&bad) = self.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {bad} outside vocab of size {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Inference-mode logits, one row per batch entry.
pub fn forward(
    params: &Parameters,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Array2<f64>, ModelError> {
    batch.check(config)?;
    if params.encoder() != config.encoder {
        return Err(ModelError::ShapeMismatch(
            "parameters do not match the configured encoder".into(),
        ));
    }
    let mut logits = Array2::zeros((batch.len(), config.num_classes));
    for i in 0..batch.len() {
        let (row, _) = forward_example(params, config, &batch.row(i), None);
        logits.row_mut(i).assign(&row);
    }
    Ok(logits)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let probs = softmax_vec(row.as_slice().expect("contiguous row"));
        row.iter_mut().zip(probs).for_each(|(r, p)| *r = p);
    }
    out
}

pub fn softmax_vec(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// `ln(sum(exp(z)))`, stabilized.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
