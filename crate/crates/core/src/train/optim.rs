use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::layers::Param;
use crate::tensor::{Scalar, Tensor};

/// `accum <- decay*accum + (1-decay)*grad^2`,
/// `param <- param - lr*grad / (sqrt(accum) + eps)`.
pub fn rmsprop_update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    accum: &mut Tensor<T>,
    lr: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    if !param.same_dims(grad) || !param.same_dims(accum) {
        return Err(shape_err!(
            "rmsprop: param {:?}, grad {:?}, accum {:?}",
            param.dims(),
            grad.dims(),
            accum.dims()
        ));
    }
    let (lr, decay, eps) = (T::of(lr), T::of(decay), T::of(eps));
    let one = T::one();
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(accum.data_mut()) {
        *a = decay * *a + (one - decay) * g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// RMSprop with one accumulator per named param.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    accum: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon,
            accum: BTreeMap::new(),
        }
    }

    /// Updates each param from its `grad` field.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>) -> Result<()> {
        for p in params {
            let a = self
                .accum
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.dims()));
            rmsprop_update(&mut p.value, &p.grad, a, self.learning_rate, self.decay, self.epsilon)?;
        }
        Ok(())
    }
}
