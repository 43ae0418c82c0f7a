use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_loss_and_gradient, weighted_cross_entropy, ClassWeights};
use crate::model::{forward, Batch, ModelConfig, Parameters};

/// Coordinates checked per tensor; smaller tensors are checked exhaustively.
pub const COORDS_PER_TENSOR: usize = 64;
/// Floor on the relative-error denominator, so coordinates whose true
/// gradient is ~0 are judged by absolute error instead.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub tensors: Vec<TensorCheck>,
}

fn loss(params: &Parameters, config: &ModelConfig, batch: &Batch, gold: &[usize], weights: &ClassWeights) -> f64 {
    let logits: Array2<f64> = forward(params, config, batch).expect("batch fits the model");
    weighted_cross_entropy(&logits, gold, weights)
        .expect("labels fit the model")
        .loss
}

/// Compares backpropagated gradients of the weighted cross-entropy against
/// central differences `(L(p + eps) - L(p - eps)) / 2 eps`, for every tensor.
///
/// Runs in inference mode without clipping. Tensors larger than
/// [`COORDS_PER_TENSOR`] are sampled, half of the sample drawn from
/// coordinates with a non-zero analytic gradient.
pub fn grad_check(
    config: &ModelConfig,
    params: &Parameters,
    batch: &Batch,
    gold: &[usize],
    weights: &ClassWeights,
    eps: f64,
) -> GradCheckReport {
    let seqs: Vec<_> = (0..batch.len()).map(|i| batch.row(i)).collect();
    let (_, analytic) = batch_loss_and_gradient(params, config, &seqs, gold, weights, None);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut probe = params.clone();
    let mut tensors = Vec::new();

    for (ti, view) in analytic.tensors().into_iter().enumerate() {
        let grad = view.data;
        let coords: Vec<usize> = if grad.len() <= COORDS_PER_TENSOR {
            (0..grad.len()).collect()
        } else {
            let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
            let half = COORDS_PER_TENSOR / 2;
            let mut picked: Vec<usize> = if nonzero.len() <= half {
                nonzero.clone()
            } else {
                sample(&mut rng, nonzero.len(), half)
                    .into_iter()
                    .map(|i| nonzero[i])
                    .collect()
            };
            let rest = COORDS_PER_TENSOR - picked.len();
            picked.extend(sample(&mut rng, grad.len(), rest));
            picked.sort_unstable();
            picked.dedup();
            picked
        };

        let mut check = TensorCheck {
            name: view.name.clone(),
            checked: coords.len(),
            max_relative_error: 0.0,
            max_abs_error: 0.0,
        };
        for &ci in &coords {
            let original = params.tensors()[ti].data[ci];
            probe.tensors_mut()[ti].data[ci] = original + eps;
            let hi = loss(&probe, config, batch, gold, weights);
            probe.tensors_mut()[ti].data[ci] = original - eps;
            let lo = loss(&probe, config, batch, gold, weights);
            probe.tensors_mut()[ti].data[ci] = original;

            let numeric = (hi - lo) / (2.0 * eps);
            let a = grad[ci];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_relative_error = check.max_relative_error.max(rel);
        }
        tensors.push(check);
    }

    GradCheckReport {
        max_relative_error: tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max),
        max_abs_error: tensors.iter().map(|t| t.max_abs_error).fold(0.0, f64::max),
        tensors,
    }
}
