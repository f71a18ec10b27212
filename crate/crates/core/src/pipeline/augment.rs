//! Corner/center crops and horizontal flips, shared by every frame of a clip.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Crop {
    Tl,
    Tr,
    Bl,
    Br,
    Center,
}

impl Crop {
    pub const ALL: [Crop; 5] = [Crop::Tl, Crop::Tr, Crop::Bl, Crop::Br, Crop::Center];

    /// Top-left corner `(row, col)` of a `size`-square window in an `h × w` image.
    pub fn offset(self, h: usize, w: usize, size: usize) -> (usize, usize) {
        let (dy, dx) = (h - size, w - size);
        match self {
            Crop::Tl => (0, 0),
            Crop::Tr => (0, dx),
            Crop::Bl => (dy, 0),
            Crop::Br => (dy, dx),
            Crop::Center => (dy / 2, dx / 2),
        }
    }
}

/// One clip's augmentation decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub crop: Crop,
    pub flip: bool,
}

impl Augment {
    pub fn random(rng: &mut Rng) -> Self {
        Self {
            crop: Crop::ALL[rng.below(Crop::ALL.len())],
            flip: rng.coin(),
        }
    }
}

pub fn crop<T: Scalar>(img: &Tensor<T>, top: usize, left: usize, size: usize) -> Result<Tensor<T>> {
    let d = img.dims();
    if d.len() != 3 {
        return Err(shape_err!("crop expects [C, H, W], got {d:?}"));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    if top + size > h || left + size > w {
        return Err(arg_err!("{size}×{size} crop at ({top}, {left}) exceeds {h}×{w}"));
    }
    let src = img.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&src[row + left..row + left + size]);
        }
    }
    Tensor::new(&[c, size, size], out)
}

/// Mirrors columns.
pub fn flip_horizontal<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let w = *img.dims().last().expect("non-empty dims");
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Applies the same crop window and flip to every frame.
pub fn augment_clip<T: Scalar>(frames: &[Tensor<T>], aug: Augment, size: usize) -> Result<Vec<Tensor<T>>> {
    frames
        .iter()
        .map(|f| {
            let d = f.dims();
            if d.len() != 3 || d[1] < size || d[2] < size {
                return Err(arg_err!("frame {d:?} smaller than the {size}×{size} crop"));
            }
            let (top, left) = aug.crop.offset(d[1], d[2], size);
            let c = crop(f, top, left, size)?;
            Ok(if aug.flip { flip_horizontal(&c) } else { c })
        })
        .collect()
}
