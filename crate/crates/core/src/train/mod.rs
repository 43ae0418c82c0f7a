//! Fine-tuning recipe: class-weighted cross-entropy, a triangular learning
//! rate over all steps, Adam updates with global-norm clipping, shuffled
//! minibatches, and a finite-difference gradient checker.

mod gradcheck;
mod loss;
mod optim;
mod schedule;
mod weights;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, TensorCheck, COORDS_PER_TENSOR};
pub use loss::{example_logit_grad, weighted_cross_entropy, WeightedLoss};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use schedule::{lr_at, peak_step};
pub use weights::{compute_class_weights, ClassWeighting, ClassWeights};

use crate::corpus::{dataset_stats, Dataset, LabelScheme};
use crate::eval::{confusion, macro_f1};
use crate::model::{argmax, backward_example, forward_example, ModelConfig, ModelError, Parameters, TokenSeq};
use crate::textproc::TextPipeline;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset scheme {scheme} has {classes} classes but the model has {model}")]
    SchemeMismatch {
        scheme: LabelScheme,
        classes: usize,
        model: usize,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("class {0} has no examples; balanced weights are undefined")]
    EmptyClass(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Examples per unit of parallel gradient work. Fixed, so the reduction order
/// and hence the result do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// `None` disables clipping.
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-3,
            epochs: 5,
            batch_size: 32,
            warmup_fraction: 0.1,
            class_weighting: ClassWeighting::None,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            gradient_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.peak_lr.is_nan() || self.peak_lr <= 0.0 {
            return bad("peak_lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if matches!(self.gradient_clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("gradient_clip_norm must be positive");
        }
        Ok(())
    }

    pub fn total_steps(&self, n_examples: usize) -> usize {
        self.epochs * n_examples.div_ceil(self.batch_size)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_macro_f1: Option<f64>,
    pub lr_at_epoch_end: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate used at every update step.
    pub lr_trace: Vec<f64>,
}

impl TrainHistory {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Weighted loss and parameter gradient of a batch.
///
/// `dropout_seeds`, when given, holds one generator seed per example and turns
/// on training-mode dropout.
pub fn batch_loss_and_gradient(
    params: &Parameters,
    config: &ModelConfig,
    seqs: &[TokenSeq],
    gold: &[usize],
    weights: &ClassWeights,
    dropout_seeds: Option<&[u64]>,
) -> (WeightedLoss, Parameters) {
    let weight_sum: f64 = gold.iter().map(|&g| weights.get(g)).sum();
    let indices: Vec<usize> = (0..seqs.len()).collect();
    let partials: Vec<(Vec<f64>, Parameters)> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = Parameters::zeros(config);
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut rng = dropout_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
                let (logits, cache) = forward_example(params, config, &seqs[i], rng.as_mut());
                let z = logits.as_slice().expect("contiguous logits");
                let w = weights.get(gold[i]);
                losses.push(w * (crate::model::log_sum_exp(z) - z[gold[i]]));
                let dlogits = Array1::from(example_logit_grad(z, gold[i], w, weight_sum));
                backward_example(params, config, &cache, dlogits.view(), &mut grads);
            }
            (losses, grads)
        })
        .collect();

    let mut total = Parameters::zeros(config);
    let mut per_example = Vec::with_capacity(seqs.len());
    for (losses, grads) in partials {
        per_example.extend(losses);
        total.add_scaled(&grads, 1.0);
    }
    let loss = if weight_sum > 0.0 {
        per_example.iter().sum::<f64>() / weight_sum
    } else {
        0.0
    };
    (
        WeightedLoss {
            loss,
            per_example,
            weight_sum,
        },
        total,
    )
}

/// Inference-mode argmax predictions for pre-encoded sequences.
pub fn predict_encoded(params: &Parameters, config: &ModelConfig, seqs: &[TokenSeq]) -> Vec<usize> {
    seqs.par_iter()
        .map(|s| {
            let (logits, _) = forward_example(params, config, s, None);
            argmax(logits.as_slice().expect("contiguous logits"))
        })
        .collect()
}

fn encode_all(ds: &Dataset, pipeline: &TextPipeline, max_len: usize) -> Vec<TokenSeq> {
    ds.examples()
        .par_iter()
        .map(|ex| TokenSeq::from_ids(&pipeline.encode(&ex.text, max_len)))
        .collect()
}

/// Trains `params` on `ds`. See [`train_with_callback`].
pub fn train(
    config: &ModelConfig,
    params: &Parameters,
    ds: &Dataset,
    pipeline: &TextPipeline,
    tc: &TrainConfig,
    heldout: Option<&Dataset>,
) -> Result<(Parameters, TrainHistory), TrainError> {
    train_with_callback(config, params, ds, pipeline, tc, heldout, |_| {})
}

/// Runs `tc.epochs` shuffled passes over `ds`, calling `on_epoch` after each.
///
/// `total_steps = epochs * ceil(N / batch_size)`; update `s` (1-based) uses
/// `lr_at(s, total_steps, ..)`. Deterministic for a fixed `tc.seed`.
pub fn train_with_callback(
    config: &ModelConfig,
    params: &Parameters,
    ds: &Dataset,
    pipeline: &TextPipeline,
    tc: &TrainConfig,
    heldout: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Parameters, TrainHistory), TrainError> {
    tc.validate()?;
    config.validate()?;
    for d in std::iter::once(ds).chain(heldout) {
        if d.scheme().num_classes() != config.num_classes {
            return Err(TrainError::SchemeMismatch {
                scheme: d.scheme(),
                classes: d.scheme().num_classes(),
                model: config.num_classes,
            });
        }
    }
    if pipeline.tokenizer.vocab_size() > config.vocab_size {
        return Err(TrainError::ShapeMismatch(format!(
            "tokenizer has {} symbols but the model embeds only {}",
            pipeline.tokenizer.vocab_size(),
            config.vocab_size
        )));
    }
    if params.encoder() != config.encoder {
        return Err(TrainError::ShapeMismatch(
            "parameters do not match the configured encoder".into(),
        ));
    }
    if tc.epochs == 0 {
        return Ok((params.clone(), TrainHistory::default()));
    }
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let weights = compute_class_weights(&dataset_stats(ds), tc.class_weighting)?;
    let seqs = encode_all(ds, pipeline, config.max_len);
    let gold = ds.labels();
    let heldout_data = heldout
        .filter(|h| !h.is_empty())
        .map(|h| (encode_all(h, pipeline, config.max_len), h.labels()));

    let total_steps = tc.total_steps(ds.len());
    let mut params = params.clone();
    let mut adam = Adam::new(&params, tc.beta1, tc.beta2, tc.adam_eps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x9E37_79B9_7F4A_7C15);
    let use_dropout = config.dropout_rate > 0.0;

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut step = 0;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for batch in order.chunks(tc.batch_size) {
            step += 1;
            let batch_seqs: Vec<TokenSeq> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let batch_gold: Vec<usize> = batch.iter().map(|&i| gold[i]).collect();
            let seeds: Option<Vec<u64>> =
                use_dropout.then(|| batch.iter().map(|_| dropout_rng.random()).collect());

            let (loss, mut grads) = batch_loss_and_gradient(
                &params,
                config,
                &batch_seqs,
                &batch_gold,
                &weights,
                seeds.as_deref(),
            );
            loss_sum += loss.per_example.iter().sum::<f64>();
            weight_sum += loss.weight_sum;

            if let Some(max_norm) = tc.gradient_clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            let lr = lr_at(step, total_steps, tc.peak_lr, tc.warmup_fraction);
            adam.update(&mut params, &grads, lr);
            history.lr_trace.push(lr);
        }

        let heldout_macro_f1 = heldout_data.as_ref().map(|(hs, hg)| {
            let preds = predict_encoded(&params, config, hs);
            let m = confusion(hg, &preds, config.num_classes).expect("labels within scheme");
            macro_f1(&m).expect("non-empty held-out set")
        });
        let record = EpochRecord {
            epoch,
            mean_loss: if weight_sum > 0.0 { loss_sum / weight_sum } else { 0.0 },
            heldout_macro_f1,
            lr_at_epoch_end: *history.lr_trace.last().expect("at least one step"),
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((params, history))
}
