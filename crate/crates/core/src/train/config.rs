use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Clips per update. At least 2: the pre-head batch norm needs a batch.
    pub batch_size: usize,
    pub iterations: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            iterations: 7500,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 1e-8,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(arg_err!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return Err(arg_err!("batch_size must be at least 2 for batch norm, got {}", self.batch_size));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(arg_err!("rmsprop_decay must lie in (0, 1), got {}", self.rmsprop_decay));
        }
        if self.rmsprop_epsilon.is_nan() || self.rmsprop_epsilon < 0.0 {
            return Err(arg_err!("rmsprop_epsilon must be non-negative"));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(arg_err!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}
