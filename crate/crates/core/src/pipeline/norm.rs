use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Global scalar mean and standard deviation of model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl NormStats {
    /// Population statistics over every element of every tensor. A zero
    /// spread falls back to `std = 1`.
    pub fn compute<'a>(inputs: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0f64, 0f64);
        for t in inputs {
            for &v in t.data() {
                let v = f64::from(v);
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(arg_err!("no inputs to compute normalization statistics from"));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let mut std = var.sqrt();
        if std.is_nan() || std <= 1e-12 {
            log::warn!("input variance is zero; normalizing with std = 1");
            std = 1.0;
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, t: &Tensor<f32>) -> Tensor<f32> {
        let (m, s) = (self.mean, self.std);
        t.map(|v| ((f64::from(v) - m) / s) as f32)
    }
}
