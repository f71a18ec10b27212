//! Fully-connected affine map `y = W·x + b`.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct AffineGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    let &[m, n] = w.dims() else {
        return Err(shape_err!("affine weight must be [m,n], got {:?}", w.dims()));
    };
    if x.dims() != [n] {
        return Err(shape_err!(
            "affine: weight is [{m},{n}] but input is {:?}",
            x.dims()
        ));
    }
    Ok((m, n))
}

/// `y[o] = b[o] + Σ_i W[o,i]·x[i]`, summed left to right from the bias.
pub fn matmul_affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = check(x, w)?;
    b.expect_dims(&[m], "affine bias")?;
    let xd = x.data();
    let out = w
        .data()
        .chunks_exact(n)
        .zip(b.data())
        .map(|(row, &bias)| {
            let mut acc = bias;
            for (&wv, &xv) in row.iter().zip(xd) {
                acc += wv * xv;
            }
            acc
        })
        .collect();
    Tensor::new(&[m], out)
}

/// `grad_W = grad_y ⊗ x`, `grad_x = Wᵀ·grad_y`, `grad_b = grad_y`.
pub fn affine_grad<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, grad_y: &Tensor<T>) -> Result<AffineGrads<T>> {
    let (m, n) = check(x, w)?;
    grad_y.expect_dims(&[m], "affine upstream gradient")?;
    let xd = x.data();
    let gy = grad_y.data();
    let mut gw = Vec::with_capacity(m * n);
    let mut gx = vec![T::zero(); n];
    for (o, row) in w.data().chunks_exact(n).enumerate() {
        let g = gy[o];
        gw.extend(xd.iter().map(|&xv| g * xv));
        for (acc, &wv) in gx.iter_mut().zip(row) {
            *acc += wv * g;
        }
    }
    Ok(AffineGrads {
        x: Tensor::new(&[n], gx)?,
        w: Tensor::new(&[m, n], gw)?,
        b: grad_y.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_multiplication() {
        let w = Tensor::<f64>::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap();
        let x = Tensor::<f64>::from_f64(&[2], &[1., 1.]).unwrap();
        let y = matmul_affine(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[3., 7.]);
    }

    #[test]
    fn identity_weight() {
        let w = Tensor::<f64>::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::<f64>::from_f64(&[3], &[-1., 0.5, 2.]).unwrap();
        assert_eq!(matmul_affine(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn dims_mismatch() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(matmul_affine(&x, &w, &Tensor::zeros(&[2])).is_err());
        assert!(matmul_affine(&Tensor::zeros(&[3]), &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn grads_by_hand() {
        let w = Tensor::<f64>::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap();
        let x = Tensor::<f64>::from_f64(&[2], &[5., 6.]).unwrap();
        let gy = Tensor::<f64>::from_f64(&[2], &[1., -1.]).unwrap();
        let g = affine_grad(&x, &w, &gy).unwrap();
        assert_eq!(g.w.data(), &[5., 6., -5., -6.]);
        assert_eq!(g.x.data(), &[-2., -2.]);
        assert_eq!(g.b.data(), &[1., -1.]);
    }
}
