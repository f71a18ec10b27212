//! Synthetic clips: a bright square that moves (violent) or stays put
//! (non-violent) over a static textured background.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::frames::{frame_path, write_frame};
use super::manifest::{Manifest, ManifestEntry, NONVIOLENT, VIOLENT};

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
}

/// `frame_count` frames of `[3, size, size]` with values on the 8-bit grid.
/// The square never leaves the frame, so it is drawn whole in every frame.
pub fn synthetic_frames(label: u8, frame_count: usize, size: usize, rng: &mut Rng) -> Vec<Tensor<f32>> {
    let plane = size * size;
    let mut background = vec![0f32; 3 * plane];
    let base = rng.uniform(0.2, 0.4);
    for v in &mut background {
        *v = quantize(base + rng.uniform(-0.05, 0.05));
    }
    let side = (size / 4).max(2);
    let span = (size - side) as f64;
    let colour: Vec<f32> = (0..3).map(|_| quantize(rng.uniform(0.75, 1.0))).collect();
    let (mut y, mut x) = (rng.uniform(0.0, span), rng.uniform(0.0, span));
    let speed = (size as f64 / 8.0).max(1.0);
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let (mut vy, mut vx) = (speed * angle.sin(), speed * angle.cos());
    if label == NONVIOLENT {
        (vy, vx) = (0.0, 0.0);
    }
    (0..frame_count)
        .map(|_| {
            let mut data = background.clone();
            let (top, left) = (y.round() as usize, x.round() as usize);
            for (c, &col) in colour.iter().enumerate() {
                for r in top..top + side {
                    let row = c * plane + r * size;
                    data[row + left..row + left + side].fill(col);
                }
            }
            for (p, v) in [(&mut y, &mut vy), (&mut x, &mut vx)] {
                *p += *v;
                if *p < 0.0 || *p > span {
                    *v = -*v;
                    *p = p.clamp(0.0, span);
                }
            }
            Tensor::new(&[3, size, size], data).expect("dims match data")
        })
        .collect()
}

/// Writes `per_class` clips of each label as PNG frame directories under
/// `dir/clips/` plus `dir/manifest.csv`, and returns the manifest.
pub fn write_synthetic_dataset(dir: &Path, per_class: usize, frame_count: usize, size: usize, seed: u64) -> Result<Manifest> {
    let mut rng = Rng::new(seed);
    let mut entries = Vec::new();
    for i in 0..per_class {
        for label in [VIOLENT, NONVIOLENT] {
            let kind = if label == VIOLENT { "fight" } else { "calm" };
            let clip_id = format!("{kind}_{i:03}");
            let rel = Path::new("clips").join(&clip_id);
            let clip_dir = dir.join(&rel);
            fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
            let mut clip_rng = rng.fork(entries.len() as u64);
            for (k, f) in synthetic_frames(label, frame_count, size, &mut clip_rng).iter().enumerate() {
                write_frame(&frame_path(&clip_dir, k), f)?;
            }
            entries.push(ManifestEntry {
                clip_id,
                path: rel,
                label,
                frame_count,
            });
        }
    }
    let manifest = Manifest::new(entries, dir)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::frame_difference;

    #[test]
    fn static_clip_has_identical_frames() {
        let f = synthetic_frames(NONVIOLENT, 6, 16, &mut Rng::new(2));
        assert!(f.windows(2).all(|w| w[0] == w[1]));
        let d = frame_difference(&f).unwrap();
        assert!(d.iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn moving_clip_changes() {
        let f = synthetic_frames(VIOLENT, 6, 16, &mut Rng::new(2));
        assert!(f.windows(2).all(|w| w[0] != w[1]));
    }
}
