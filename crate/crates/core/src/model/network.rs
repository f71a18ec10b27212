//! Assembly of the frame backbone, temporal aggregator, batch norm and
//! classification head, with batched forward and backward passes.

use crate::error::{shape_err, Error, Result};
use crate::kernels::pointwise::sigmoid_scalar;
use crate::layers::{Layer, LayerCache, LayerKind, Mode, Param};
use crate::par;
use crate::recurrent::{
    convlstm_sequence, convlstm_sequence_backward, lstm_sequence, lstm_sequence_backward, CellGrads, ConvLstmParams,
    ConvLstmSequenceCache, ConvLstmState, LstmParams, LstmSequenceCache, LstmState,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::archive::{load_weights_scoped, LoadScope};
use super::config::{AggregatorKind, Backbone, BackboneInit, ModelConfig, NormSlot};

/// One stage of a backbone conv stack. Every convolution is followed by a ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
    /// Optional normalization position, resolved through `norm_slots`.
    NormSlot(usize),
}

/// The fixed conv stacks.
pub fn backbone_stages(b: Backbone) -> Vec<Stage> {
    use Stage::*;
    match b {
        Backbone::AlexnetConv => vec![
            Conv { out: 96, kernel: 11, stride: 4, pad: 2 },
            NormSlot(0),
            Pool { window: 3, stride: 2 },
            Conv { out: 256, kernel: 5, stride: 1, pad: 2 },
            NormSlot(1),
            Pool { window: 3, stride: 2 },
            Conv { out: 384, kernel: 3, stride: 1, pad: 1 },
            Conv { out: 384, kernel: 3, stride: 1, pad: 1 },
            Conv { out: 256, kernel: 3, stride: 1, pad: 1 },
            Pool { window: 3, stride: 2 },
        ],
        Backbone::TinyCnn => vec![
            Conv { out: 8, kernel: 5, stride: 2, pad: 2 },
            NormSlot(0),
            Pool { window: 2, stride: 2 },
            Conv { out: 16, kernel: 3, stride: 1, pad: 1 },
            NormSlot(1),
            Pool { window: 2, stride: 2 },
        ],
    }
}

#[derive(Debug, Clone)]
pub enum Aggregator<T> {
    ConvLstm(ConvLstmParams<T>),
    Lstm(LstmParams<T>),
}

impl<T: Scalar> Aggregator<T> {
    pub fn params(&self) -> [&Param<T>; 3] {
        match self {
            Aggregator::ConvLstm(p) => p.params(),
            Aggregator::Lstm(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 3] {
        match self {
            Aggregator::ConvLstm(p) => p.params_mut(),
            Aggregator::Lstm(p) => p.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Aggregator::ConvLstm(p) => p.param_count(),
            Aggregator::Lstm(p) => p.param_count(),
        }
    }
}

#[derive(Debug, Clone)]
enum AggregatorCache<T> {
    ConvLstm(ConvLstmSequenceCache<T>),
    Lstm(LstmSequenceCache<T>),
}

/// Per-clip forward state.
#[derive(Debug, Clone)]
pub struct ClipCache<T> {
    backbone: Vec<LayerCache<T>>,
    aggregator: AggregatorCache<T>,
    frames: usize,
}

/// Everything a batched backward pass needs.
#[derive(Debug, Clone)]
pub struct BatchCache<T> {
    clips: Vec<ClipCache<T>>,
    norm: LayerCache<T>,
    head: Vec<LayerCache<T>>,
    pub probs: Vec<T>,
    pub mode: Mode,
}

/// Named component of a model's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Backbone,
    Aggregator,
    BatchNorm,
    Head,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Backbone, Component::Aggregator, Component::BatchNorm, Component::Head];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::Backbone => "backbone",
            Component::Aggregator => "aggregator",
            Component::BatchNorm => "norm",
            Component::Head => "head",
        }
    }

    pub fn of(name: &str) -> Option<Component> {
        let head = name.split('.').next()?;
        Self::ALL.into_iter().find(|c| c.prefix() == head)
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    backbone: Vec<Layer<T>>,
    aggregator: Aggregator<T>,
    norm: Layer<T>,
    head: Vec<Layer<T>>,
    /// `[C, H, W]` of one frame after the conv stack.
    feature_dims: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a model. With `backbone_init = archive:<path>`
    /// the backbone tensors are then overwritten from the archive.
    pub fn build(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut backbone = Vec::new();
        let mut dims = vec![1, 3, cfg.frame_size, cfg.frame_size];
        let (mut convs, mut pools) = (0, 0);
        for stage in backbone_stages(cfg.backbone) {
            let added: Vec<Layer<T>> = match stage {
                Stage::Conv { out, kernel, stride, pad } => {
                    convs += 1;
                    vec![
                        Layer::conv2d(&format!("backbone.conv{convs}"), dims[1], out, kernel, stride, pad, rng)?,
                        Layer::relu(&format!("backbone.relu{convs}")),
                    ]
                }
                Stage::Pool { window, stride } => {
                    pools += 1;
                    vec![Layer::maxpool(&format!("backbone.pool{pools}"), window, stride)]
                }
                Stage::NormSlot(i) => match cfg.norm_slot(i) {
                    NormSlot::Batchnorm => vec![Layer::batchnorm(&format!("backbone.norm{}", i + 1), dims[1])],
                    NormSlot::None => vec![],
                },
            };
            for l in added {
                dims = l.output_dims(&dims).map_err(|e| {
                    shape_err!("frame size {} too small for the {:?} backbone: {e}", cfg.frame_size, cfg.backbone)
                })?;
                backbone.push(l);
            }
        }
        let conv_out = dims[1..].to_vec();

        let width = cfg.width();
        let aggregator = match cfg.aggregator {
            AggregatorKind::Convlstm => {
                Aggregator::ConvLstm(ConvLstmParams::init("aggregator", conv_out[0], width, cfg.aggregator_kernel, rng)?)
            }
            AggregatorKind::Lstm => {
                backbone.push(Layer::flatten("backbone.flatten"));
                let mut n: usize = conv_out.iter().product();
                for (i, &w) in cfg.feature_fc.iter().enumerate() {
                    let idx = 6 + i;
                    backbone.push(Layer::linear(&format!("backbone.fc{idx}"), n, w, rng)?);
                    backbone.push(Layer::relu(&format!("backbone.relu_fc{idx}")));
                    n = w;
                }
                Aggregator::Lstm(LstmParams::init("aggregator", n, width, rng)?)
            }
        };

        let norm = Layer::batchnorm("norm", width);
        let mut head = vec![Layer::flatten("head.flatten")];
        let mut n = match cfg.aggregator {
            AggregatorKind::Convlstm => width * conv_out[1] * conv_out[2],
            AggregatorKind::Lstm => width,
        };
        for (i, &w) in cfg.head.iter().enumerate() {
            if i > 0 {
                head.push(Layer::relu(&format!("head.relu{i}")));
            }
            head.push(Layer::linear(&format!("head.fc{}", i + 1), n, w, rng)?);
            n = w;
        }

        let mut model = Self {
            config: cfg.clone(),
            backbone,
            aggregator,
            norm,
            head,
            feature_dims: conv_out,
        };
        if let BackboneInit::Archive(path) = &cfg.backbone_init {
            load_weights_scoped(&mut model, path, LoadScope::BackboneOnly)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `[C, H, W]` of one frame's conv-stack output.
    pub fn feature_dims(&self) -> &[usize] {
        &self.feature_dims
    }

    pub fn backbone_layers(&self) -> &[Layer<T>] {
        &self.backbone
    }

    pub fn aggregator(&self) -> &Aggregator<T> {
        &self.aggregator
    }

    pub fn aggregator_mut(&mut self) -> &mut Aggregator<T> {
        &mut self.aggregator
    }

    pub fn head_layers(&self) -> &[Layer<T>] {
        &self.head
    }

    /// All trainable tensors in a fixed order: backbone, aggregator, batch
    /// norm, head.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.backbone.iter().flat_map(|l| l.params()).collect();
        out.extend(self.aggregator.params());
        out.extend(self.norm.params());
        out.extend(self.head.iter().flat_map(|l| l.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.backbone.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.extend(self.aggregator.params_mut());
        out.extend(self.norm.params_mut());
        out.extend(self.head.iter_mut().flat_map(|l| l.params_mut()));
        out
    }

    fn norm_layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.backbone.iter().chain(std::iter::once(&self.norm)).filter(|l| l.kind() == LayerKind::BatchNorm)
    }

    /// Non-trainable tensors (batch-norm running statistics), named
    /// `<layer>.running_mean` / `<layer>.running_var`.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in self.norm_layers() {
            let s = l.norm_stats().expect("batchnorm stats");
            out.push((format!("{}.running_mean", l.name()), &s.running_mean));
            out.push((format!("{}.running_var", l.name()), &s.running_var));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let layers = self.backbone.iter_mut().chain(std::iter::once(&mut self.norm));
        for l in layers.filter(|l| l.kind() == LayerKind::BatchNorm) {
            let name = l.name().to_string();
            let s = l.norm_stats_mut().expect("batchnorm stats");
            out.push((format!("{name}.running_mean"), &mut s.running_mean));
            out.push((format!("{name}.running_var"), &mut s.running_var));
        }
        out
    }

    /// Every stored tensor, trainable or not, by name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self.params().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
        out.extend(self.buffers());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut buffers: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let layers = self.backbone.iter_mut().chain(std::iter::once(&mut self.norm));
        for l in layers {
            let name = l.name().to_string();
            let is_norm = l.kind() == LayerKind::BatchNorm;
            // Split borrows: params first, then running stats of the same layer.
            let (params, stats) = l.split_mut();
            for p in params {
                buffers.push((p.name.clone(), &mut p.value));
            }
            if is_norm {
                let s = stats.expect("batchnorm stats");
                buffers.push((format!("{name}.running_mean"), &mut s.running_mean));
                buffers.push((format!("{name}.running_var"), &mut s.running_var));
            }
        }
        for p in self.aggregator.params_mut() {
            buffers.push((p.name.clone(), &mut p.value));
        }
        for l in &mut self.head {
            for p in l.params_mut() {
                buffers.push((p.name.clone(), &mut p.value));
            }
        }
        buffers
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    /// Adds `grads` (ordered like [`Model::params`]) into each param's `grad`.
    pub fn accumulate_grads(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        let params = self.params_mut();
        if params.len() != grads.len() {
            return Err(shape_err!("{} gradients for {} params", grads.len(), params.len()));
        }
        for (p, g) in params.into_iter().zip(grads) {
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    fn backbone_param_count(&self) -> usize {
        self.backbone.iter().map(|l| l.params().len()).sum()
    }

    fn check_clip(&self, frames: &[Tensor<T>]) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::Argument("clip has no frames".into()));
        }
        let s = self.config.frame_size;
        for f in frames {
            f.expect_dims(&[3, s, s], "model input frame")?;
        }
        Ok(())
    }

    fn clip_forward(&self, frames: &[Tensor<T>], mode: Mode) -> Result<(Tensor<T>, ClipCache<T>)> {
        self.check_clip(frames)?;
        let mut x = Tensor::stack(frames)?;
        let mut caches = Vec::with_capacity(self.backbone.len());
        for l in &self.backbone {
            let (y, c) = l.forward_with(&x, mode)?;
            caches.push(c);
            x = y;
        }
        let steps = x.unstack()?;
        let (h, agg) = match &self.aggregator {
            Aggregator::ConvLstm(p) => {
                let d = &self.feature_dims;
                let init = ConvLstmState::zeros(p.hidden(), d[1], d[2]);
                let (h, c) = convlstm_sequence(&steps, p, &init)?;
                (h, AggregatorCache::ConvLstm(c))
            }
            Aggregator::Lstm(p) => {
                let (h, c) = lstm_sequence(&steps, p, &LstmState::zeros(p.units()))?;
                (h, AggregatorCache::Lstm(c))
            }
        };
        Ok((
            h,
            ClipCache {
                backbone: caches,
                aggregator: agg,
                frames: frames.len(),
            },
        ))
    }

    /// Gradients for backbone and aggregator params, in [`Model::params`] order.
    fn clip_backward(&self, cache: &ClipCache<T>, grad_h: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (cell, g_inputs): (CellGrads<T>, Vec<Tensor<T>>) = match (&self.aggregator, &cache.aggregator) {
            (Aggregator::ConvLstm(p), AggregatorCache::ConvLstm(c)) => {
                let g = convlstm_sequence_backward(p, c, grad_h)?;
                let gi = g.inputs.clone();
                (g, gi)
            }
            (Aggregator::Lstm(p), AggregatorCache::Lstm(c)) => {
                let g = lstm_sequence_backward(p, c, grad_h)?;
                let gi = g.inputs.clone();
                (g, gi)
            }
            _ => return Err(Error::State("aggregator cache does not match the model".into())),
        };
        debug_assert_eq!(g_inputs.len(), cache.frames);
        let nb = self.backbone_param_count();
        let mut grads: Vec<Tensor<T>> = self.backbone.iter().flat_map(|l| l.grad_buffers()).collect();
        let mut gx = Tensor::stack(&g_inputs)?;
        let mut end = nb;
        for (l, c) in self.backbone.iter().zip(&cache.backbone).rev() {
            let start = end - l.params().len();
            gx = l.backward_with(c, &gx, &mut grads[start..end])?;
            end = start;
        }
        grads.push(cell.w_x);
        grads.push(cell.w_h);
        grads.push(cell.bias);
        Ok(grads)
    }

    /// Forward pass over a batch of clips; returns per-clip probabilities and
    /// the cache for [`Model::backward_batch`]. Does not mutate the model:
    /// train-mode batch statistics are applied separately with
    /// [`Model::update_running_stats`].
    pub fn forward_batch<C>(&self, clips: &[C], mode: Mode) -> Result<BatchCache<T>>
    where
        C: AsRef<[Tensor<T>]> + Sync,
    {
        if clips.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let per_clip = par::map(clips.len(), |i| self.clip_forward(clips[i].as_ref(), mode));
        let mut hs = Vec::with_capacity(clips.len());
        let mut caches = Vec::with_capacity(clips.len());
        for r in per_clip {
            let (h, c) = r?;
            hs.push(h);
            caches.push(c);
        }
        let (mut x, norm_cache) = self.norm.forward_with(&Tensor::stack(&hs)?, mode)?;
        let mut head_caches = Vec::with_capacity(self.head.len());
        for l in &self.head {
            let (y, c) = l.forward_with(&x, mode)?;
            head_caches.push(c);
            x = y;
        }
        x.expect_dims(&[clips.len(), 1], "head output")?;
        let probs = x.data().iter().map(|&z| sigmoid_scalar(z)).collect();
        Ok(BatchCache {
            clips: caches,
            norm: norm_cache,
            head: head_caches,
            probs,
            mode,
        })
    }

    /// Gradients of a loss with `∂L/∂p = grad_probs` with respect to every
    /// param, ordered like [`Model::params`].
    pub fn backward_batch(&self, cache: &BatchCache<T>, grad_probs: &[T]) -> Result<Vec<Tensor<T>>> {
        let b = cache.probs.len();
        if grad_probs.len() != b {
            return Err(shape_err!("{} probability gradients for a batch of {b}", grad_probs.len()));
        }
        let dz: Vec<T> = cache
            .probs
            .iter()
            .zip(grad_probs)
            .map(|(&p, &g)| g * p * (T::one() - p))
            .collect();
        let mut g = Tensor::new(&[b, 1], dz)?;

        let head_grads_len: usize = self.head.iter().map(|l| l.params().len()).sum();
        let mut head_grads: Vec<Tensor<T>> = self.head.iter().flat_map(|l| l.grad_buffers()).collect();
        let mut end = head_grads_len;
        for (l, c) in self.head.iter().zip(&cache.head).rev() {
            let start = end - l.params().len();
            g = l.backward_with(c, &g, &mut head_grads[start..end])?;
            end = start;
        }
        let mut norm_grads = self.norm.grad_buffers();
        let g_h = self.norm.backward_with(&cache.norm, &g, &mut norm_grads)?;
        let g_hs = g_h.unstack()?;

        let per_clip = par::map(b, |i| self.clip_backward(&cache.clips[i], &g_hs[i]));
        let mut total: Option<Vec<Tensor<T>>> = None;
        for r in per_clip {
            let grads = r?;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g)?;
                    }
                }
            }
        }
        let mut out = total.expect("non-empty batch");
        out.extend(norm_grads);
        out.extend(head_grads);
        Ok(out)
    }

    /// Applies train-mode batch-norm statistics from `cache`, clip by clip in
    /// batch order, then the pre-head batch norm.
    pub fn update_running_stats(&mut self, cache: &BatchCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        for clip in &cache.clips {
            for (l, c) in self.backbone.iter_mut().zip(&clip.backbone) {
                l.update_running_stats(c);
            }
        }
        self.norm.update_running_stats(&cache.norm);
    }

    /// Hash of every ReLU sign and pooling winner in a forward pass. Two
    /// passes with equal patterns lie on the same linear piece of the
    /// network's non-smooth layers.
    pub fn activation_pattern(&self, cache: &BatchCache<T>) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for clip in &cache.clips {
            for (l, c) in self.backbone.iter().zip(&clip.backbone) {
                l.hash_pattern(c, &mut h);
            }
        }
        for (l, c) in self.head.iter().zip(&cache.head) {
            l.hash_pattern(c, &mut h);
        }
        h.finish()
    }

    /// Violence probability of one clip, in eval mode.
    pub fn forward(&self, clip: &[Tensor<T>]) -> Result<T> {
        Ok(self.forward_batch(&[clip], Mode::Eval)?.probs[0])
    }

    /// Copies every tensor into a model of another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let cfg = ModelConfig {
            backbone_init: BackboneInit::Xavier,
            ..self.config.clone()
        };
        let mut out = Model::<U>::build(&cfg, &mut Rng::new(0)).expect("config already validated");
        out.config = self.config.clone();
        for ((_, dst), (_, src)) in out.named_tensors_mut().into_iter().zip(self.named_tensors_in_mut_order()) {
            *dst = src.cast();
        }
        out
    }

    /// Same order as [`Model::named_tensors_mut`].
    fn named_tensors_in_mut_order(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for l in self.backbone.iter().chain(std::iter::once(&self.norm)) {
            for p in l.params() {
                out.push((p.name.clone(), &p.value));
            }
            if let Some(s) = l.norm_stats() {
                out.push((format!("{}.running_mean", l.name()), &s.running_mean));
                out.push((format!("{}.running_var", l.name()), &s.running_var));
            }
        }
        for p in self.aggregator.params() {
            out.push((p.name.clone(), &p.value));
        }
        for l in &self.head {
            for p in l.params() {
                out.push((p.name.clone(), &p.value));
            }
        }
        out
    }
}
