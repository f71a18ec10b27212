//! Frame files, temporal sampling and differencing.

use std::path::{Path, PathBuf};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.png"))
}

/// `frame_count` indices spread evenly over a clip:
/// `floor(i * (frame_count - 1) / (n - 1))` for `i` in `0..n`.
pub fn sample_indices(frame_count: usize, n: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(arg_err!("need at least 2 sampled frames, got {n}"));
    }
    if n > frame_count {
        return Err(arg_err!("cannot sample {n} frames from a clip of {frame_count}"));
    }
    Ok((0..n).map(|i| i * (frame_count - 1) / (n - 1)).collect())
}

/// `D_i = F_{i+1} - F_i`.
pub fn frame_difference<T: Scalar>(frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if frames.len() < 2 {
        return Err(arg_err!("frame difference needs at least 2 frames, got {}", frames.len()));
    }
    frames
        .windows(2)
        .map(|w| {
            if !w[0].same_dims(&w[1]) {
                return Err(shape_err!("frame dims {:?} vs {:?}", w[0].dims(), w[1].dims()));
            }
            let data = w[1].data().iter().zip(w[0].data()).map(|(&b, &a)| b - a).collect();
            Tensor::new(w[0].dims(), data)
        })
        .collect()
}

/// Reads an 8-bit image as `[3, H, W]` scaled to `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as an 8-bit PNG.
pub fn write_frame(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    let d = frame.dims();
    if d.len() != 3 || d[0] != 3 {
        return Err(shape_err!("frame must be [3, H, W], got {d:?}"));
    }
    let (h, w) = (d[1], d[2]);
    let src = frame.data();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (src[c * h * w + y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([at(0), at(1), at(2)])
    });
    img.save(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_indices(10, 5).unwrap(), vec![0, 2, 4, 6, 9]);
        assert_eq!(sample_indices(7, 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(sample_indices(100, 2).unwrap(), vec![0, 99]);
        assert!(sample_indices(4, 5).is_err());
        assert!(sample_indices(4, 1).is_err());
    }

    #[test]
    fn constant_differences() {
        let f = |v| Tensor::<f32>::full(&[3, 2, 2], v);
        let d = frame_difference(&[f(0.0), f(1.0), f(3.0)]).unwrap();
        assert_eq!(d, vec![f(1.0), f(2.0)]);
        assert!(frame_difference(&[f(0.0)]).is_err());
    }

    #[test]
    fn png_roundtrip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let t = Tensor::new(&[3, 4, 5], data).unwrap();
        let p = frame_path(dir.path(), 3);
        assert!(p.ends_with("frame_00003.png"));
        write_frame(&p, &t).unwrap();
        assert_eq!(read_frame(&p).unwrap(), t);
    }
}
