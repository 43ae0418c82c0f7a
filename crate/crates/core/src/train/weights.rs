use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::DatasetStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    Balanced,
}

impl std::fmt::Display for ClassWeighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassWeighting::None => "none",
            ClassWeighting::Balanced => "balanced",
        })
    }
}

impl std::str::FromStr for ClassWeighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ClassWeighting::None),
            "balanced" => Ok(ClassWeighting::Balanced),
            other => Err(format!("unknown class weighting {other:?} (none|balanced)")),
        }
    }
}

/// Per-class multipliers applied to the cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights(vec![1.0; num_classes])
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `balanced`: `w_c = N / (K * n_c)`, so that `sum_c n_c * w_c = N`.
pub fn compute_class_weights(
    stats: &DatasetStats,
    mode: ClassWeighting,
) -> Result<ClassWeights, TrainError> {
    let k = stats.per_class.len();
    match mode {
        ClassWeighting::None => Ok(ClassWeights::uniform(k)),
        ClassWeighting::Balanced => {
            if let Some(c) = stats.per_class.iter().position(|&n| n == 0) {
                return Err(TrainError::EmptyClass(c));
            }
            let n = stats.total as f64;
            Ok(ClassWeights(
                stats
                    .per_class
                    .iter()
                    .map(|&nc| n / (k as f64 * nc as f64))
                    .collect(),
            ))
        }
    }
}
