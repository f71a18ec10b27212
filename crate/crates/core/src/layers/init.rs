use crate::error::{arg_err, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Xavier/Glorot uniform: i.i.d. samples on `[−a, a]`, `a = sqrt(6/(fan_in+fan_out))`.
///
/// For convolution kernels pass fans that include the receptive field
/// (`Cin·k²`, `Cout·k²`).
pub fn xavier_init<T: Scalar>(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(arg_err!("xavier_init: fans must be positive, got {fan_in}/{fan_out}"));
    }
    let a = xavier_bound(fan_in, fan_out);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::of(rng.uniform(-a, a))).collect();
    Tensor::new(dims, data)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
