//! Max pooling with recorded argmax for the backward pass.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat source index (into the input) of every pooled maximum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_dims: [usize; 3],
    pub output_dims: [usize; 3],
    pub argmax: Vec<usize>,
}

/// `y[c,i,j]` is the maximum over the `k×k` window at `(i·stride, j·stride)`.
/// Ties resolve to the lowest flat index.
pub fn maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndex)> {
    let &[c, h, w] = x.dims() else {
        return Err(shape_err!("maxpool2d input must be [C,H,W], got {:?}", x.dims()));
    };
    if k == 0 || stride == 0 {
        return Err(shape_err!("maxpool2d: window and stride must be positive"));
    }
    if k > h || k > w {
        return Err(shape_err!("maxpool2d: window {k} larger than input {h}x{w}"));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                for u in 0..k {
                    let row = base + (i * stride + u) * w + j * stride;
                    for idx in row..row + k {
                        // Strict comparison keeps the first (lowest) index on ties.
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[c, oh, ow], out)?,
        PoolIndex {
            input_dims: [c, h, w],
            output_dims: [c, oh, ow],
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2d_grad<T: Scalar>(
    index: &PoolIndex,
    grad_y: &Tensor<T>,
    input_dims: &[usize],
) -> Result<Tensor<T>> {
    if input_dims != index.input_dims {
        return Err(shape_err!(
            "maxpool2d_grad: argmax recorded for {:?}, asked for {input_dims:?}",
            index.input_dims
        ));
    }
    grad_y.expect_dims(&index.output_dims, "maxpool2d_grad upstream gradient")?;
    let mut gx = Tensor::zeros(input_dims);
    let gd = gx.data_mut();
    for (&src, &g) in index.argmax.iter().zip(grad_y.data()) {
        gd[src] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn constant_input_takes_first_index() {
        let x = Tensor::<f64>::full(&[2, 4, 4], 1.5);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
        assert_eq!(&idx.argmax[..4], &[0, 2, 8, 10]);
        assert_eq!(idx.argmax[4], 16);
    }

    #[test]
    fn alexnet_pool_shape() {
        let x = Tensor::<f32>::zeros(&[256, 13, 13]);
        let (y, _) = maxpool2d(&x, 3, 2).unwrap();
        assert_eq!(y.dims(), &[256, 6, 6]);
    }

    #[test]
    fn oversized_window_fails() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2]);
        assert!(maxpool2d(&x, 3, 1).is_err());
    }

    #[test]
    fn grad_routes_to_max() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1., 5., 3., 4.]).unwrap();
        let (_, idx) = maxpool2d(&x, 2, 2).unwrap();
        let gy = Tensor::<f64>::from_f64(&[1, 1, 1], &[2.5]).unwrap();
        let gx = maxpool2d_grad(&idx, &gy, &[1, 2, 2]).unwrap();
        assert_eq!(gx.data(), &[0., 2.5, 0., 0.]);
        let zero = maxpool2d_grad(&idx, &Tensor::<f64>::zeros(&[1, 1, 1]), &[1, 2, 2]).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_index_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let (_, idx) = maxpool2d(&x, 2, 2).unwrap();
        let gy = Tensor::<f64>::zeros(&[1, 2, 2]);
        assert!(maxpool2d_grad(&idx, &gy, &[1, 5, 5]).is_err());
        assert!(maxpool2d_grad(&idx, &Tensor::<f64>::zeros(&[1, 3, 3]), &[1, 4, 4]).is_err());
    }
}
