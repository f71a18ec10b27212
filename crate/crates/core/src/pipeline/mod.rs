//! Manifests, frame sampling, differencing, normalization, augmentation and
//! cross-validation folds.

mod augment;
mod folds;
mod frames;
mod loader;
mod manifest;
mod norm;
mod synthetic;

pub use augment::{augment_clip, crop, flip_horizontal, Augment, Crop};
pub use folds::{make_folds, FoldPlan};
pub use frames::{frame_difference, frame_path, read_frame, sample_indices, write_frame};
pub use loader::{finish_inputs, Clip, ClipLoader, ClipSource, InMemoryClips, PipelineConfig, Subset};
pub use manifest::{write_atomic, Manifest, ManifestEntry, NONVIOLENT, VIOLENT};
pub use norm::NormStats;
pub use synthetic::{synthetic_frames, write_synthetic_dataset};
