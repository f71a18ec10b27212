//! Batch normalization over the batch and spatial axes of `[B, C, ...]`.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

use super::Mode;

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Non-trainable running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Folds one batch's statistics into the running estimates. The running
    /// variance uses the unbiased estimate.
    pub fn update(&mut self, cache: &NormCache<T>) {
        let Some(batch) = &cache.batch else { return };
        let m = cache.count as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let mo = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&batch.mean) {
            *r = T::of((1.0 - mo) * r.as_f64() + mo * b);
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&batch.var) {
            *r = T::of((1.0 - mo) * r.as_f64() + mo * b * unbias);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Elements per channel (`B · spatial`).
    pub count: usize,
    /// Present in train mode only.
    pub batch: Option<BatchMoments>,
}

fn layout(dims: &[usize], channels: usize) -> Result<(usize, usize)> {
    if dims.len() < 2 || dims[1] != channels {
        return Err(shape_err!(
            "batchnorm expects [B, {channels}, ...], got {dims:?}"
        ));
    }
    Ok((dims[0], dims[2..].iter().product()))
}

/// Normalizes `x` per channel. Train mode uses batch statistics (biased
/// variance) and needs `B ≥ 2`; eval mode uses the running statistics.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &BatchNormStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let c = stats.channels();
    gamma.expect_dims(&[c], "batchnorm gamma")?;
    beta.expect_dims(&[c], "batchnorm beta")?;
    let (b, spatial) = layout(x.dims(), c)?;
    if mode == Mode::Train && b < 2 {
        return Err(arg_err!("batchnorm in train mode needs a batch of at least 2, got {b}"));
    }
    let xd = x.data();
    let count = b * spatial;
    let idx = |n: usize, ch: usize, s: usize| (n * c + ch) * spatial + s;

    let (mean, var, batch) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for n in 0..b {
                    for s in 0..spatial {
                        acc += xd[idx(n, ch, s)].as_f64();
                    }
                }
                let mu = acc / count as f64;
                let mut sq = 0.0;
                for n in 0..b {
                    for s in 0..spatial {
                        let d = xd[idx(n, ch, s)].as_f64() - mu;
                        sq += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            let moments = BatchMoments {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(moments))
        }
        Mode::Eval => (
            stats.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            stats.running_var.data().iter().map(|v| v.as_f64()).collect(),
            None,
        ),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.epsilon).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for n in 0..b {
        for ch in 0..c {
            for s in 0..spatial {
                let i = idx(n, ch, s);
                let h = T::of((xd[i].as_f64() - mean[ch]) * inv_std[ch]);
                xhat[i] = h;
                y[i] = gd[ch] * h + bd[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.dims(), y)?,
        NormCache {
            xhat: Tensor::new(x.dims(), xhat)?,
            inv_std: inv_std.into_iter().map(T::of).collect(),
            count,
            batch,
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = gamma.len();
    if !grad_y.same_dims(&cache.xhat) {
        return Err(shape_err!(
            "batchnorm backward: gradient {:?} vs cached {:?}",
            grad_y.dims(),
            cache.xhat.dims()
        ));
    }
    let (b, spatial) = layout(grad_y.dims(), c)?;
    let idx = |n: usize, ch: usize, s: usize| (n * c + ch) * spatial + s;
    let (gy, xh, gd) = (grad_y.data(), cache.xhat.data(), gamma.data());
    let m = T::of(cache.count as f64);

    let mut g_gamma = vec![T::zero(); c];
    let mut g_beta = vec![T::zero(); c];
    for n in 0..b {
        for ch in 0..c {
            for s in 0..spatial {
                let i = idx(n, ch, s);
                g_gamma[ch] += gy[i] * xh[i];
                g_beta[ch] += gy[i];
            }
        }
    }

    let mut gx = vec![T::zero(); gy.len()];
    match cache.batch {
        Some(_) => {
            // dx = inv_std/m · (m·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = γ·dy.
            for ch in 0..c {
                let sum_dxhat = gd[ch] * g_beta[ch];
                let sum_dxhat_xhat = gd[ch] * g_gamma[ch];
                let k = cache.inv_std[ch] / m;
                for n in 0..b {
                    for s in 0..spatial {
                        let i = idx(n, ch, s);
                        let dxhat = gd[ch] * gy[i];
                        gx[i] = k * (m * dxhat - sum_dxhat - xh[i] * sum_dxhat_xhat);
                    }
                }
            }
        }
        None => {
            for n in 0..b {
                for (ch, (&g, &inv)) in gd.iter().zip(&cache.inv_std).enumerate() {
                    for s in 0..spatial {
                        let i = idx(n, ch, s);
                        gx[i] = gy[i] * g * inv;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(grad_y.dims(), gx)?,
        Tensor::new(&[c], g_gamma)?,
        Tensor::new(&[c], g_beta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_input_passes_through() {
        // Per channel over the batch: values {-1, 1} have mean 0 and variance 1.
        let x = Tensor::<f64>::from_f64(&[2, 2], &[-1., 1., 1., -1.]).unwrap();
        let stats = BatchNormStats::new(2);
        let (y, _) = batchnorm_forward(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &stats, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f64>::from_f64(&[3, 1, 2], &[1., 2., 3., 4., 5., 9.]).unwrap();
        let stats = BatchNormStats::new(1);
        let (y, _) = batchnorm_forward(&x, &Tensor::zeros(&[1]), &Tensor::full(&[1], 5.0), &stats, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn train_needs_two_samples() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        let stats = BatchNormStats::new(3);
        let r = batchnorm_forward(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &stats, Mode::Train);
        assert!(matches!(r, Err(crate::Error::Argument(_))));
        assert!(batchnorm_forward(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &stats, Mode::Eval).is_ok());
    }

    #[test]
    fn running_update_moves_toward_batch() {
        let x = Tensor::<f64>::from_f64(&[2, 1], &[2., 4.]).unwrap();
        let mut stats = BatchNormStats::new(1);
        let (_, cache) = batchnorm_forward(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &stats, Mode::Train).unwrap();
        stats.update(&cache);
        assert!((stats.running_mean.data()[0] - 0.3).abs() < 1e-12);
        // biased var 1, unbiased 2: 0.9·1 + 0.1·2
        assert!((stats.running_var.data()[0] - 1.1).abs() < 1e-12);
    }
}
