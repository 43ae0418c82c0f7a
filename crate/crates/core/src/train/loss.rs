use ndarray::Array2;

use super::{ClassWeights, TrainError};
use crate::model::{log_sum_exp, softmax_vec};

/// Batch loss and the per-example terms it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLoss {
    /// Sum of per-example losses divided by the sum of applied weights.
    pub loss: f64,
    /// `-w_gold * ln p_gold` for each example.
    pub per_example: Vec<f64>,
    pub weight_sum: f64,
}

fn check_shapes(logits: &Array2<f64>, gold: &[usize], weights: &ClassWeights) -> Result<(), TrainError> {
    if logits.nrows() != gold.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            gold.len()
        )));
    }
    if logits.ncols() != weights.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} classes in logits, {} weights",
            logits.ncols(),
            weights.len()
        )));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= weights.len()) {
        return Err(TrainError::ShapeMismatch(format!("gold label {g} out of range")));
    }
    Ok(())
}

/// Class-weighted cross-entropy with a weight-normalized mean reduction.
pub fn weighted_cross_entropy(
    logits: &Array2<f64>,
    gold: &[usize],
    weights: &ClassWeights,
) -> Result<WeightedLoss, TrainError> {
    check_shapes(logits, gold, weights)?;
    let mut per_example = Vec::with_capacity(gold.len());
    let mut weight_sum = 0.0;
    for (row, &g) in logits.rows().into_iter().zip(gold) {
        let z = row.as_slice().expect("contiguous logits");
        let nll = log_sum_exp(z) - z[g];
        let w = weights.get(g);
        per_example.push(w * nll);
        weight_sum += w;
    }
    let loss = if weight_sum > 0.0 {
        per_example.iter().sum::<f64>() / weight_sum
    } else {
        0.0
    };
    Ok(WeightedLoss {
        loss,
        per_example,
        weight_sum,
    })
}

/// `d loss / d logits` for one example, given the batch weight sum.
pub fn example_logit_grad(z: &[f64], gold: usize, weight: f64, weight_sum: f64) -> Vec<f64> {
    let mut p = softmax_vec(z);
    p[gold] -= 1.0;
    let scale = weight / weight_sum;
    p.iter_mut().for_each(|x| *x *= scale);
    p
}
