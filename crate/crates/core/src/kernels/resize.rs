//! Bilinear resampling with corner alignment: output corners sample input
//! corners exactly, `src = dst · (in−1)/(out−1)`.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn source_coords(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|d| {
            if out == 1 || input == 1 {
                return (0, 0, 0.0);
            }
            let s = d as f64 * (input - 1) as f64 / (out - 1) as f64;
            let lo = (s.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = img.dims() else {
        return Err(shape_err!("resize input must be [C,H,W], got {:?}", img.dims()));
    };
    if out_h == 0 || out_w == 0 {
        return Err(arg_err!("resize target {out_h}x{out_w} must be positive"));
    }
    if out_h == h && out_w == w {
        return Ok(img.clone());
    }
    let rows = source_coords(out_h, h);
    let cols = source_coords(out_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let p00 = plane[y0 * w + x0].as_f64();
                let p01 = plane[y0 * w + x1].as_f64();
                let p10 = plane[y1 * w + x0].as_f64();
                let p11 = plane[y1 * w + x1].as_f64();
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out.push(T::of(top + (bottom - top) * fy));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}
