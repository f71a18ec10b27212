//! Stateful layers over batched tensors.
//!
//! Every layer takes a leading batch axis: `[B, C, H, W]` for spatial layers,
//! `[B, n]` for fully-connected ones. Two calling styles are offered:
//!
//! * [`Layer::forward`] / [`Layer::backward`] keep the cache inside the layer
//!   and accumulate into the layer's own gradients.
//! * [`Layer::forward_with`] / [`Layer::backward_with`] leave the layer
//!   untouched and hand the cache and gradient buffers to the caller, so a
//!   model can run several clips through the same layer concurrently.

mod batchnorm;
mod init;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchMoments, BatchNormStats, NormCache, DEFAULT_EPSILON,
    DEFAULT_MOMENTUM,
};
pub use init::{xavier_bound, xavier_init};

use crate::error::{shape_err, Error, Result};
use crate::kernels::{affine_grad, conv2d, conv2d_grad, matmul_affine, maxpool2d, maxpool2d_grad, PoolIndex};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.dims());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d { stride: usize, pad: usize },
    MaxPool { window: usize, stride: usize },
    Relu,
    BatchNorm,
    Linear,
    Flatten,
}

/// Forward-pass values a layer needs for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Input(Tensor<T>),
    Pool {
        indices: Vec<PoolIndex>,
        input_dims: Vec<usize>,
    },
    Norm(NormCache<T>),
    Flatten(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    name: String,
    kind: LayerKind,
    params: Vec<Param<T>>,
    norm: Option<BatchNormStats<T>>,
    mode: Mode,
    cache: Option<LayerCache<T>>,
}

impl<T: Scalar> Layer<T> {
    fn with_kind(name: &str, kind: LayerKind, params: Vec<Param<T>>) -> Self {
        Self {
            name: name.to_string(),
            kind,
            params,
            norm: None,
            mode: Mode::Train,
            cache: None,
        }
    }

    /// Xavier-initialized kernel `[cout, cin, k, k]` and zero bias.
    pub fn conv2d(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let rf = kernel * kernel;
        let w = xavier_init(&[cout, cin, kernel, kernel], cin * rf, cout * rf, rng)?;
        Ok(Self::with_kind(
            name,
            LayerKind::Conv2d { stride, pad },
            vec![
                Param::new(format!("{name}.weight"), w),
                Param::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            ],
        ))
    }

    /// Xavier-initialized weight `[out, in]` and zero bias.
    pub fn linear(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let w = xavier_init(&[outputs, inputs], inputs, outputs, rng)?;
        Ok(Self::with_kind(
            name,
            LayerKind::Linear,
            vec![
                Param::new(format!("{name}.weight"), w),
                Param::new(format!("{name}.bias"), Tensor::zeros(&[outputs])),
            ],
        ))
    }

    pub fn maxpool(name: &str, window: usize, stride: usize) -> Self {
        Self::with_kind(name, LayerKind::MaxPool { window, stride }, Vec::new())
    }

    pub fn relu(name: &str) -> Self {
        Self::with_kind(name, LayerKind::Relu, Vec::new())
    }

    pub fn flatten(name: &str) -> Self {
        Self::with_kind(name, LayerKind::Flatten, Vec::new())
    }

    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn batchnorm(name: &str, channels: usize) -> Self {
        let mut l = Self::with_kind(
            name,
            LayerKind::BatchNorm,
            vec![
                Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
                Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            ],
        );
        l.norm = Some(BatchNormStats::new(channels));
        l
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn norm_stats(&self) -> Option<&BatchNormStats<T>> {
        self.norm.as_ref()
    }

    pub fn norm_stats_mut(&mut self) -> Option<&mut BatchNormStats<T>> {
        self.norm.as_mut()
    }

    /// Params and running statistics borrowed together.
    pub fn split_mut(&mut self) -> (&mut [Param<T>], Option<&mut BatchNormStats<T>>) {
        (&mut self.params, self.norm.as_mut())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Zeroed buffers shaped like this layer's gradients.
    pub fn grad_buffers(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros(p.value.dims())).collect()
    }

    /// Output dims for a given input dims, without running the layer.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2d { stride, pad } => {
                let [b, rest @ ..] = input else {
                    return Err(shape_err!("{}: empty input dims", self.name));
                };
                let g = crate::kernels::ConvGeometry::new(rest, self.params[0].value.dims(), stride, pad)?;
                let o = g.out_dims();
                Ok(vec![*b, o[0], o[1], o[2]])
            }
            LayerKind::MaxPool { window, stride } => {
                let &[b, c, h, w] = input else {
                    return Err(shape_err!("{}: expected [B,C,H,W], got {input:?}", self.name));
                };
                if window > h || window > w {
                    return Err(shape_err!("{}: window {window} larger than {h}x{w}", self.name));
                }
                Ok(vec![b, c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerKind::Relu | LayerKind::BatchNorm => Ok(input.to_vec()),
            LayerKind::Linear => {
                let out = self.params[0].value.dims()[0];
                Ok(vec![input[0], out])
            }
            LayerKind::Flatten => Ok(vec![input[0], input[1..].iter().product()]),
        }
    }

    /// Pure forward pass. Train-mode batch norm reports its batch moments in
    /// the cache; running statistics are not touched (see
    /// [`Layer::update_running_stats`]).
    pub fn forward_with(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, LayerCache<T>)> {
        match self.kind {
            LayerKind::Conv2d { stride, pad } => {
                let (w, b) = (&self.params[0].value, &self.params[1].value);
                let y = per_sample(x, 4, &self.name, |xi| conv2d(xi, w, b, stride, pad))?;
                Ok((y, LayerCache::Input(x.clone())))
            }
            LayerKind::MaxPool { window, stride } => {
                let samples = split_batch(x, 4, &self.name)?;
                let pooled = samples
                    .iter()
                    .map(|xi| maxpool2d(xi, window, stride))
                    .collect::<Result<Vec<_>>>()?;
                let (ys, indices): (Vec<_>, Vec<_>) = pooled.into_iter().unzip();
                Ok((
                    Tensor::stack(&ys)?,
                    LayerCache::Pool {
                        indices,
                        input_dims: samples[0].dims().to_vec(),
                    },
                ))
            }
            LayerKind::Relu => Ok((crate::kernels::relu(x), LayerCache::Input(x.clone()))),
            LayerKind::BatchNorm => {
                let stats = self.norm.as_ref().expect("batchnorm layer carries stats");
                let (y, cache) =
                    batchnorm_forward(x, &self.params[0].value, &self.params[1].value, stats, mode)?;
                Ok((y, LayerCache::Norm(cache)))
            }
            LayerKind::Linear => {
                let (w, b) = (&self.params[0].value, &self.params[1].value);
                let y = per_sample(x, 2, &self.name, |xi| matmul_affine(xi, w, b))?;
                Ok((y, LayerCache::Input(x.clone())))
            }
            LayerKind::Flatten => {
                if x.rank() < 2 {
                    return Err(shape_err!("{}: expected a batched input, got {:?}", self.name, x.dims()));
                }
                let n: usize = x.dims()[1..].iter().product();
                let y = x.clone().reshape(&[x.dims()[0], n])?;
                Ok((y, LayerCache::Flatten(x.dims().to_vec())))
            }
        }
    }

    /// Feeds the piecewise-linear branch taken by this layer (ReLU signs,
    /// pooling winners) into `state`. Other layers add nothing.
    pub fn hash_pattern<H: std::hash::Hasher>(&self, cache: &LayerCache<T>, state: &mut H) {
        match (self.kind, cache) {
            (LayerKind::Relu, LayerCache::Input(x)) => {
                for chunk in x.data().chunks(64) {
                    let bits = chunk.iter().enumerate().fold(0u64, |b, (i, &v)| b | (u64::from(v > T::zero()) << i));
                    state.write_u64(bits);
                }
            }
            (LayerKind::MaxPool { .. }, LayerCache::Pool { indices, .. }) => {
                for p in indices {
                    for &a in &p.argmax {
                        state.write_usize(a);
                    }
                }
            }
            _ => {}
        }
    }

    /// Pure backward pass: accumulates parameter gradients into `grads`
    /// (ordered like [`Layer::params`]) and returns the input gradient.
    pub fn backward_with(&self, cache: &LayerCache<T>, grad_y: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        if grads.len() != self.params.len() {
            return Err(shape_err!(
                "{}: {} gradient buffers for {} params",
                self.name,
                grads.len(),
                self.params.len()
            ));
        }
        match (self.kind, cache) {
            (LayerKind::Conv2d { stride, pad }, LayerCache::Input(x)) => {
                let w = &self.params[0].value;
                let xs = split_batch(x, 4, &self.name)?;
                let gys = split_batch(grad_y, 4, &self.name)?;
                if xs.len() != gys.len() {
                    return Err(shape_err!("{}: batch mismatch in backward", self.name));
                }
                let parts = par::map(xs.len(), |i| conv2d_grad(&xs[i], w, &gys[i], stride, pad));
                let mut gx = Vec::with_capacity(parts.len());
                for part in parts {
                    let g = part?;
                    grads[0].add_assign(&g.w)?;
                    grads[1].add_assign(&g.b)?;
                    gx.push(g.x);
                }
                Tensor::stack(&gx)
            }
            (LayerKind::MaxPool { .. }, LayerCache::Pool { indices, input_dims }) => {
                let gys = split_batch(grad_y, 4, &self.name)?;
                if gys.len() != indices.len() {
                    return Err(shape_err!("{}: batch mismatch in backward", self.name));
                }
                let gx = indices
                    .iter()
                    .zip(&gys)
                    .map(|(idx, gy)| maxpool2d_grad(idx, gy, input_dims))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::stack(&gx)
            }
            (LayerKind::Relu, LayerCache::Input(x)) => {
                if !x.same_dims(grad_y) {
                    return Err(shape_err!("{}: gradient {:?} vs input {:?}", self.name, grad_y.dims(), x.dims()));
                }
                Ok(crate::kernels::pointwise::zip(x, grad_y, |v, g| if v > T::zero() { g } else { T::zero() }))
            }
            (LayerKind::BatchNorm, LayerCache::Norm(c)) => {
                let (gx, gg, gb) = batchnorm_backward(c, &self.params[0].value, grad_y)?;
                grads[0].add_assign(&gg)?;
                grads[1].add_assign(&gb)?;
                Ok(gx)
            }
            (LayerKind::Linear, LayerCache::Input(x)) => {
                let w = &self.params[0].value;
                let xs = split_batch(x, 2, &self.name)?;
                let gys = split_batch(grad_y, 2, &self.name)?;
                if xs.len() != gys.len() {
                    return Err(shape_err!("{}: batch mismatch in backward", self.name));
                }
                let mut gx = Vec::with_capacity(xs.len());
                for (xi, gi) in xs.iter().zip(&gys) {
                    let g = affine_grad(xi, w, gi)?;
                    grads[0].add_assign(&g.w)?;
                    grads[1].add_assign(&g.b)?;
                    gx.push(g.x);
                }
                Tensor::stack(&gx)
            }
            (LayerKind::Flatten, LayerCache::Flatten(dims)) => grad_y.clone().reshape(dims),
            (kind, _) => Err(Error::State(format!(
                "{}: cache does not belong to a {kind:?} layer",
                self.name
            ))),
        }
    }

    /// Folds train-mode batch moments from `cache` into the running stats.
    pub fn update_running_stats(&mut self, cache: &LayerCache<T>) {
        if let (Some(stats), LayerCache::Norm(c)) = (self.norm.as_mut(), cache) {
            stats.update(c);
        }
    }

    /// Forward pass that keeps the cache for [`Layer::backward`]. In train
    /// mode batch norm also updates its running statistics.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = self.forward_with(x, self.mode)?;
        if self.mode == Mode::Train {
            self.update_running_stats(&cache);
        }
        self.cache = Some(cache);
        Ok(y)
    }

    /// Backward pass for the most recent [`Layer::forward`]; gradients
    /// accumulate into the layer's params.
    pub fn backward(&mut self, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State(format!("{}: backward called before forward", self.name)))?;
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| p.grad.clone()).collect();
        let gx = self.backward_with(cache, grad_y, &mut grads)?;
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad = g;
        }
        Ok(gx)
    }
}

fn split_batch<T: Scalar>(x: &Tensor<T>, rank: usize, name: &str) -> Result<Vec<Tensor<T>>> {
    if x.rank() != rank {
        return Err(shape_err!(
            "{name}: expected a rank-{rank} batched input, got {:?}",
            x.dims()
        ));
    }
    x.unstack()
}

fn per_sample<T: Scalar>(
    x: &Tensor<T>,
    rank: usize,
    name: &str,
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync + Send,
) -> Result<Tensor<T>> {
    let xs = split_batch(x, rank, name)?;
    let ys = par::map(xs.len(), |i| f(&xs[i])).into_iter().collect::<Result<Vec<_>>>()?;
    Tensor::stack(&ys)
}
