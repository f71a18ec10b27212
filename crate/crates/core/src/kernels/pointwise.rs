//! Elementwise maps and their backward rules.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Sigmoid,
    Tanh,
    Relu,
    Add,
    Sub,
    Hadamard,
}

impl Pointwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Pointwise::Add | Pointwise::Sub | Pointwise::Hadamard)
    }
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn check_binary<T: Scalar>(kind: Pointwise, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    match (kind.is_binary(), b) {
        (true, Some(b)) if a.same_dims(b) => Ok(()),
        (true, Some(b)) => Err(shape_err!(
            "{kind:?}: dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )),
        (true, None) => Err(shape_err!("{kind:?} needs a second operand")),
        (false, Some(_)) => Err(shape_err!("{kind:?} takes a single operand")),
        (false, None) => Ok(()),
    }
}

pub fn pointwise<T: Scalar>(kind: Pointwise, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_binary(kind, a, b)?;
    Ok(match kind {
        Pointwise::Sigmoid => a.map(sigmoid_scalar),
        Pointwise::Tanh => a.map(|v| v.tanh()),
        Pointwise::Relu => a.map(|v| if v > T::zero() { v } else { T::zero() }),
        Pointwise::Add => zip(a, b.unwrap(), |x, y| x + y),
        Pointwise::Sub => zip(a, b.unwrap(), |x, y| x - y),
        Pointwise::Hadamard => zip(a, b.unwrap(), |x, y| x * y),
    })
}

/// Gradients `(∂/∂a, ∂/∂b)` of `Σ grad_y ⊙ pointwise(kind, a, b)`.
///
/// `y` is the forward output; unary rules are expressed through it where
/// that is exact (`σ' = y(1−y)`, `tanh' = 1−y²`).
pub fn pointwise_grad<T: Scalar>(
    kind: Pointwise,
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
    y: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    check_binary(kind, a, b)?;
    if !a.same_dims(grad_y) || !a.same_dims(y) {
        return Err(shape_err!(
            "{kind:?} backward: operand {:?}, output {:?}, gradient {:?}",
            a.dims(),
            y.dims(),
            grad_y.dims()
        ));
    }
    Ok(match kind {
        Pointwise::Sigmoid => (zip(y, grad_y, |s, g| g * s * (T::one() - s)), None),
        Pointwise::Tanh => (zip(y, grad_y, |t, g| g * (T::one() - t * t)), None),
        Pointwise::Relu => (
            zip(a, grad_y, |x, g| if x > T::zero() { g } else { T::zero() }),
            None,
        ),
        Pointwise::Add => (grad_y.clone(), Some(grad_y.clone())),
        Pointwise::Sub => (grad_y.clone(), Some(grad_y.map(|g| -g))),
        Pointwise::Hadamard => {
            let b = b.unwrap();
            (zip(b, grad_y, |x, g| x * g), Some(zip(a, grad_y, |x, g| x * g)))
        }
    })
}

pub(crate) fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert!(a.same_dims(b));
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims(), data).expect("dims already checked")
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(sigmoid_scalar)
}

pub fn tanh<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|v| v.tanh())
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    pointwise(Pointwise::Add, a, Some(b))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    pointwise(Pointwise::Sub, a, Some(b))
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    pointwise(Pointwise::Hadamard, a, Some(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let z = Tensor::<f64>::from_f64(&[1], &[0.0]).unwrap();
        assert_eq!(sigmoid(&z).data(), &[0.5]);
        assert_eq!(tanh(&z).data(), &[0.0]);
        let neg = Tensor::<f64>::from_f64(&[1], &[-3.0]).unwrap();
        assert_eq!(relu(&neg).data(), &[0.0]);
        let a = Tensor::<f64>::from_f64(&[2], &[1., 2.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2], &[3., 4.]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap().data(), &[3., 8.]);
        assert_eq!(sub(&b, &a).unwrap().data(), &[2., 2.]);
    }

    #[test]
    fn binary_dims_mismatch() {
        let a = Tensor::<f32>::zeros(&[2]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(add(&a, &b), Err(crate::Error::Shape(_))));
        assert!(pointwise(Pointwise::Hadamard, &a, None).is_err());
        assert!(pointwise(Pointwise::Relu, &a, Some(&a)).is_err());
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        let z = Tensor::<f32>::from_f64(&[3], &[-1000.0, 0.0, 1000.0]).unwrap();
        let s = sigmoid(&z);
        assert!(s.all_finite());
        assert_eq!(s.data()[0], 0.0);
        assert_eq!(s.data()[2], 1.0);
    }
}
