//! 2-D cross-correlation with zero padding, via im2col.
//!
//! Each output element is accumulated as `b[o] + w[o,0]·col[0,p] + w[o,1]·col[1,p] + ...`
//! in receptive-field order `(c, u, v)`. The order is the same for every output
//! channel count and for parallel and sequential execution, so a convolution
//! over stacked kernels is bit-identical to separate convolutions per kernel.

use crate::error::{shape_err, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Resolved sizes of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        x_dims: &[usize],
        w_dims: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let &[cin, h, w] = x_dims else {
            return Err(shape_err!("conv2d input must be [C,H,W], got {x_dims:?}"));
        };
        let &[cout, wcin, kh, kw] = w_dims else {
            return Err(shape_err!(
                "conv2d kernel must be [Cout,Cin,k,k], got {w_dims:?}"
            ));
        };
        if wcin != cin {
            return Err(shape_err!(
                "conv2d: input has {cin} channels but kernel expects {wcin}"
            ));
        }
        if kh != kw {
            return Err(shape_err!("conv2d: non-square kernel {kh}x{kw}"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d: stride must be at least 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err!(
                "conv2d: kernel {kh} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        Ok(Self {
            in_channels: cin,
            in_h: h,
            in_w: w,
            out_channels: cout,
            kernel: kh,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Output spatial size for an input extent.
    pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (input + 2 * pad - kernel) / stride + 1
    }

    pub fn out_dims(&self) -> [usize; 3] {
        [self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Gradients of a convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Unfolds `x` into a `[Cin·k·k, H'·W']` patch matrix (row-major in `(c,u,v)`).
fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let k = g.kernel;
    let pixels = g.out_pixels();
    let mut col = vec![T::zero(); g.patch_len() * pixels];
    par::for_each_chunk(&mut col, pixels * k * k, |c, block| {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for u in 0..k {
            for v in 0..k {
                let row = &mut block[(u * k + v) * pixels..(u * k + v + 1) * pixels];
                for i in 0..g.out_h {
                    let yi = (i * g.stride + u) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.in_h as isize {
                        continue;
                    }
                    let src = &plane[yi as usize * g.in_w..(yi as usize + 1) * g.in_w];
                    for j in 0..g.out_w {
                        let xj = (j * g.stride + v) as isize - g.pad as isize;
                        if xj >= 0 && xj < g.in_w as isize {
                            row[i * g.out_w + j] = src[xj as usize];
                        }
                    }
                }
            }
        }
    });
    col
}

/// Folds a patch-matrix gradient back onto the input grid, accumulating overlaps.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry) -> Vec<T> {
    let k = g.kernel;
    let pixels = g.out_pixels();
    let plane_len = g.in_h * g.in_w;
    let mut x = vec![T::zero(); g.in_channels * plane_len];
    par::for_each_chunk(&mut x, plane_len, |c, plane| {
        let block = &col[c * k * k * pixels..(c + 1) * k * k * pixels];
        for u in 0..k {
            for v in 0..k {
                let row = &block[(u * k + v) * pixels..(u * k + v + 1) * pixels];
                for i in 0..g.out_h {
                    let yi = (i * g.stride + u) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.in_h as isize {
                        continue;
                    }
                    for j in 0..g.out_w {
                        let xj = (j * g.stride + v) as isize - g.pad as isize;
                        if xj >= 0 && xj < g.in_w as isize {
                            plane[yi as usize * g.in_w + xj as usize] += row[i * g.out_w + j];
                        }
                    }
                }
            }
        }
    });
    x
}

/// `y[o,i,j] = b[o] + Σ_{c,u,v} w[o,c,u,v]·x_pad[c, i·stride+u, j·stride+v]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.dims(), w.dims(), stride, pad)?;
    b.expect_dims(&[g.out_channels], "conv2d bias")?;
    let col = im2col(x.data(), &g);
    let patch = g.patch_len();
    let pixels = g.out_pixels();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![T::zero(); g.out_channels * pixels];
    par::for_each_chunk(&mut out, pixels, |o, row| {
        row.fill(bd[o]);
        let wrow = &wd[o * patch..(o + 1) * patch];
        for (r, &wv) in wrow.iter().enumerate() {
            let crow = &col[r * pixels..(r + 1) * pixels];
            for (y, &cv) in row.iter_mut().zip(crow) {
                *y += wv * cv;
            }
        }
    });
    Tensor::new(&g.out_dims(), out)
}

/// Exact gradients of `Σ grad_y ⊙ conv2d(x, w, b)` with respect to `x`, `w`, `b`.
pub fn conv2d_grad<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_y: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x.dims(), w.dims(), stride, pad)?;
    grad_y.expect_dims(&g.out_dims(), "conv2d_grad upstream gradient")?;
    let col = im2col(x.data(), &g);
    let patch = g.patch_len();
    let pixels = g.out_pixels();
    let gy = grad_y.data();
    let wd = w.data();

    let gb: Vec<T> = (0..g.out_channels)
        .map(|o| gy[o * pixels..(o + 1) * pixels].iter().copied().sum())
        .collect();

    let mut gw = vec![T::zero(); g.out_channels * patch];
    par::for_each_chunk(&mut gw, patch, |o, grow| {
        let gyrow = &gy[o * pixels..(o + 1) * pixels];
        for (r, gwv) in grow.iter_mut().enumerate() {
            let crow = &col[r * pixels..(r + 1) * pixels];
            *gwv = gyrow.iter().zip(crow).map(|(&a, &c)| a * c).sum();
        }
    });

    let mut gcol = vec![T::zero(); patch * pixels];
    par::for_each_chunk(&mut gcol, pixels, |r, row| {
        for o in 0..g.out_channels {
            let wv = wd[o * patch + r];
            let gyrow = &gy[o * pixels..(o + 1) * pixels];
            for (acc, &gv) in row.iter_mut().zip(gyrow) {
                *acc += wv * gv;
            }
        }
    });
    let gx = col2im(&gcol, &g);

    Ok(ConvGrads {
        x: Tensor::new(x.dims(), gx)?,
        w: Tensor::new(w.dims(), gw)?,
        b: Tensor::new(&[g.out_channels], gb)?,
    })
}
