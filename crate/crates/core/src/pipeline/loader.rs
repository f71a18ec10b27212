//! Turning manifest entries into model-ready frame sequences.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::kernels::resize_bilinear;
use crate::layers::Mode;
use crate::model::InputMode;
use crate::par;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::augment::{augment_clip, Augment};
use super::frames::{frame_difference, frame_path, read_frame, sample_indices};
use super::manifest::Manifest;
use super::norm::NormStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Frames sampled per clip.
    pub frames: usize,
    /// Square side frames are resized to before a training crop.
    pub resize: usize,
    /// Square side of the model input; must match the model's frame size.
    pub crop: usize,
    /// Keep decoded, resized frames in memory between loads.
    pub cache_frames: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            resize: 256,
            crop: 224,
            cache_frames: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(arg_err!("frames must be at least 2, got {}", self.frames));
        }
        if self.crop == 0 || self.crop > self.resize {
            return Err(arg_err!("crop {} must be positive and at most resize {}", self.crop, self.resize));
        }
        Ok(())
    }
}

/// A loaded clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub label: u8,
    pub frames: Vec<Tensor<f32>>,
}

/// Indexed collection of labelled clips the trainer and evaluator draw from.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn clip_id(&self, i: usize) -> &str;

    fn label(&self, i: usize) -> u8;

    /// Model-ready inputs for clip `i`. Train mode may draw augmentation
    /// decisions from `rng`.
    fn load(&self, i: usize, mode: Mode, rng: &mut Rng) -> Result<Vec<Tensor<f32>>>;
}

/// Clips already in model-ready form; `load` ignores mode and rng.
#[derive(Debug, Clone, Default)]
pub struct InMemoryClips {
    pub clips: Vec<Clip>,
}

impl ClipSource for InMemoryClips {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn clip_id(&self, i: usize) -> &str {
        &self.clips[i].clip_id
    }

    fn label(&self, i: usize) -> u8 {
        self.clips[i].label
    }

    fn load(&self, i: usize, _mode: Mode, _rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        Ok(self.clips[i].frames.clone())
    }
}

/// Optional differencing followed by normalization.
pub fn finish_inputs(frames: Vec<Tensor<f32>>, input_mode: InputMode, norm: &NormStats) -> Result<Vec<Tensor<f32>>> {
    let inputs = match input_mode {
        InputMode::Diff => frame_difference(&frames)?,
        InputMode::Frames => frames,
    };
    Ok(inputs.iter().map(|t| norm.apply(t)).collect())
}

/// Reads clips listed in a manifest from disk.
#[derive(Debug)]
pub struct ClipLoader {
    manifest: Manifest,
    config: PipelineConfig,
    input_mode: InputMode,
    norm: NormStats,
    train_cache: Vec<OnceLock<Vec<Tensor<f32>>>>,
    eval_cache: Vec<OnceLock<Vec<Tensor<f32>>>>,
}

impl ClipLoader {
    pub fn new(manifest: Manifest, config: PipelineConfig, input_mode: InputMode) -> Result<Self> {
        config.validate()?;
        for e in &manifest.entries {
            if e.frame_count < config.frames {
                return Err(arg_err!(
                    "clip {} has {} frames, fewer than the {} sampled",
                    e.clip_id,
                    e.frame_count,
                    config.frames
                ));
            }
        }
        let n = manifest.len();
        Ok(Self {
            manifest,
            config,
            input_mode,
            norm: NormStats::default(),
            train_cache: (0..n).map(|_| OnceLock::new()).collect(),
            eval_cache: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn norm(&self) -> NormStats {
        self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    fn clip_err(&self, i: usize, e: Error) -> Error {
        Error::Clip {
            clip_id: self.manifest.entries[i].clip_id.clone(),
            message: e.to_string(),
        }
    }

    /// Sampled frames resized to `side`.
    fn read_resized(&self, i: usize, side: usize) -> Result<Vec<Tensor<f32>>> {
        let e = &self.manifest.entries[i];
        let dir = self.manifest.frames_dir(e);
        sample_indices(e.frame_count, self.config.frames)?
            .into_iter()
            .map(|k| {
                let f = read_frame(&frame_path(&dir, k))?;
                resize_bilinear(&f, side, side)
            })
            .collect()
    }

    fn resized(&self, i: usize, mode: Mode) -> Result<Vec<Tensor<f32>>> {
        let (side, cache) = match mode {
            Mode::Train => (self.config.resize, &self.train_cache[i]),
            Mode::Eval => (self.config.crop, &self.eval_cache[i]),
        };
        if !self.config.cache_frames {
            return self.read_resized(i, side);
        }
        if let Some(v) = cache.get() {
            return Ok(v.clone());
        }
        let v = self.read_resized(i, side)?;
        Ok(cache.get_or_init(|| v).clone())
    }

    /// Model inputs before normalization: resized (train: then augmented)
    /// frames, differenced in diff mode.
    pub fn load_unnormalized(&self, i: usize, mode: Mode, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        let mut inner = || -> Result<Vec<Tensor<f32>>> {
            let frames = self.resized(i, mode)?;
            let frames = match mode {
                Mode::Train => augment_clip(&frames, Augment::random(rng), self.config.crop)?,
                Mode::Eval => frames,
            };
            finish_inputs(frames, self.input_mode, &NormStats::default())
        };
        inner().map_err(|e| self.clip_err(i, e))
    }

    /// Fits global normalization statistics on the eval-mode inputs of the
    /// given clips.
    pub fn fit_norm(&mut self, indices: &[usize]) -> Result<NormStats> {
        if indices.is_empty() {
            return Err(arg_err!("no training clips to fit normalization on"));
        }
        let loaded = par::map(indices.len(), |j| self.load_unnormalized(indices[j], Mode::Eval, &mut Rng::new(0)));
        let loaded = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        let stats = NormStats::compute(loaded.iter().flatten())?;
        self.norm = stats;
        Ok(stats)
    }
}

impl ClipSource for ClipLoader {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn clip_id(&self, i: usize) -> &str {
        &self.manifest.entries[i].clip_id
    }

    fn label(&self, i: usize) -> u8 {
        self.manifest.entries[i].label
    }

    fn load(&self, i: usize, mode: Mode, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        let raw = self.load_unnormalized(i, mode, rng)?;
        Ok(raw.iter().map(|t| self.norm.apply(t)).collect())
    }
}

/// A view of another source restricted to some of its indices.
pub struct Subset<'a, S: ?Sized> {
    pub source: &'a S,
    pub indices: Vec<usize>,
}

impl<'a, S: ClipSource + ?Sized> Subset<'a, S> {
    pub fn new(source: &'a S, indices: Vec<usize>) -> Self {
        Self { source, indices }
    }
}

impl<S: ClipSource + ?Sized> ClipSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn clip_id(&self, i: usize) -> &str {
        self.source.clip_id(self.indices[i])
    }

    fn label(&self, i: usize) -> u8 {
        self.source.label(self.indices[i])
    }

    fn load(&self, i: usize, mode: Mode, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        self.source.load(self.indices[i], mode, rng)
    }
}
