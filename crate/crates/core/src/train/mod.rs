//! Multi-task training: weighted cross-entropy, Adam, mini-batch loop,
//! checkpoints and the per-epoch log.

mod adam;
mod checkpoint;
mod data;
mod fit;
mod log;

use serde::{Deserialize, Serialize};

use crate::models::{ModelError, TASKS};
use crate::tensor::{cross_entropy, Element, Tensor, TensorError};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{config_hash, load_checkpoint, read_checkpoint_meta, restore_checkpoint, save_checkpoint, CheckpointMeta};
pub use data::{Example, FeatureSet, task_label_index};
pub use fit::{fit, FitOptions, FitOutcome, ResumeState};
pub use log::{EpochRecord, TrainingLog, LOG_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("task weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights(Vec<f64>),
    #[error("{weights} task weights for a model with {heads} heads")]
    WeightCount { weights: usize, heads: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("feature map {source_id:?} has shape {actual:?}, expected {expected:?}")]
    FeatureShape {
        source_id: String,
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("checkpoint was written for schedule `{checkpoint}`, requested `{requested}`")]
    ScheduleMismatch { checkpoint: String, requested: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Loss weights, one per model head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TaskWeights(Vec<f64>);

impl TaskWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(TrainError::BadWeights(weights));
        }
        Ok(Self(weights))
    }

    /// All weight on one head.
    pub fn one_hot(heads: usize, k: usize) -> Self {
        let mut w = vec![0.0; heads];
        w[k] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Maps weights onto a model's heads. A list with one entry per head is
    /// used as is; a list with one entry per known task is picked by head
    /// name and renormalized.
    pub fn for_heads(&self, task_names: &[String]) -> Result<Self> {
        if self.0.len() == task_names.len() {
            return Ok(self.clone());
        }
        if self.0.len() != TASKS.len() {
            return Err(TrainError::WeightCount {
                weights: self.0.len(),
                heads: task_names.len(),
            });
        }
        let picked = task_names
            .iter()
            .map(|t| {
                TASKS
                    .iter()
                    .position(|k| k == t)
                    .map(|i| self.0[i])
                    .ok_or_else(|| TrainError::UnknownTask(t.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let sum: f64 = picked.iter().sum();
        if sum <= 0.0 {
            return Err(TrainError::BadWeights(picked));
        }
        Self::new(picked.iter().map(|w| w / sum).collect())
    }
}

impl TryFrom<Vec<f64>> for TaskWeights {
    type Error = TrainError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TaskWeights> for Vec<f64> {
    fn from(w: TaskWeights) -> Self {
        w.0
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self(vec![0.6, 0.2, 0.2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Accent, gender, age for three-head models.
    pub task_weights: TaskWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 128,
            batch_size: 16,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            task_weights: TaskWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be positive", self.eps));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `sum_k w_k * CE(logits_k, labels_k)`; heads with zero weight contribute
/// nothing to the graph.
pub fn total_loss<T: Element>(logits: &[Tensor<T>], labels: &[Vec<usize>], weights: &TaskWeights) -> Result<Tensor<T>> {
    if logits.len() != weights.len() || labels.len() != weights.len() {
        return Err(TrainError::WeightCount {
            weights: weights.len(),
            heads: logits.len(),
        });
    }
    let mut total: Option<Tensor<T>> = None;
    for ((l, y), &w) in logits.iter().zip(labels).zip(weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        let ce = cross_entropy(l, y)?;
        let term = if w == 1.0 { ce } else { ce.scale(T::of(w)) };
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("weights sum to one"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(data: Vec<f32>, n: usize, c: usize) -> Tensor {
        Tensor::parameter(data, &[n, c]).unwrap()
    }

    #[test]
    fn weighted_sum_of_constant_losses() {
        // CE of uniform logits over C classes is ln C.
        let heads = [6usize, 2, 5];
        let ls: Vec<Tensor> = heads.iter().map(|&c| logits(vec![0.0; 3 * c], 3, c)).collect();
        let ys = vec![vec![0, 1, 2], vec![0, 1, 1], vec![4, 3, 0]];
        let w = TaskWeights::new(vec![0.6, 0.2, 0.2]).unwrap();
        let got = total_loss(&ls, &ys, &w).unwrap().item() as f64;
        let want = 0.6 * 6f64.ln() + 0.2 * 2f64.ln() + 0.2 * 5f64.ln();
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn weight_validation() {
        assert!(TaskWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(TaskWeights::new(vec![0.5, 0.6]).is_err());
        assert!(TaskWeights::new(vec![1.2, -0.2]).is_err());
        assert!(TaskWeights::new(vec![]).is_err());
        let names: Vec<String> = ["accent"].iter().map(|s| s.to_string()).collect();
        assert_eq!(TaskWeights::default().for_heads(&names).unwrap().as_slice(), &[1.0]);
        let names: Vec<String> = ["accent", "age"].iter().map(|s| s.to_string()).collect();
        let w = TaskWeights::default().for_heads(&names).unwrap();
        assert!((w.as_slice()[0] - 0.75).abs() < 1e-12 && (w.as_slice()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
        assert!(toml::from_str::<TrainConfig>("task_weights = [0.5, 0.6]").is_err());
        let mut bad = cfg.clone();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn one_hot_weights_match_single_task_gradients() {
        let data: Vec<f32> = (0..12).map(|i| (i as f32 * 0.37).sin()).collect();
        let ys = vec![vec![1, 0, 2], vec![0, 1, 1]];
        let a = logits(data.clone(), 3, 4);
        let b = logits(data[..6].to_vec(), 3, 2);
        total_loss(&[a.clone(), b.clone()], &ys, &TaskWeights::one_hot(2, 0)).unwrap().backward().unwrap();
        let single = logits(data, 3, 4);
        cross_entropy(&single, &ys[0]).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), single.grad().unwrap());
        assert!(b.grad().map_or(true, |g| g.iter().all(|&v| v == 0.0)));
    }

    proptest! {
        #[test]
        fn loss_is_linear_in_weights(raw in prop::collection::vec(0.01f64..1.0, 3), seed in 0u32..1000) {
            let sum: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let heads = [6usize, 2, 5];
            let ls: Vec<Tensor> = heads
                .iter()
                .enumerate()
                .map(|(h, &c)| logits((0..2 * c).map(|i| ((i + h * 7) as f32 + seed as f32).sin()).collect(), 2, c))
                .collect();
            let ys = vec![vec![1, 5], vec![0, 1], vec![3, 2]];
            let total = total_loss(&ls, &ys, &TaskWeights::new(w.clone()).unwrap()).unwrap().item() as f64;
            let parts: f64 = (0..3)
                .map(|k| w[k] * total_loss(&ls, &ys, &TaskWeights::one_hot(3, k)).unwrap().item() as f64)
                .sum();
            prop_assert!((total - parts).abs() < 1e-5);
        }
    }
}
