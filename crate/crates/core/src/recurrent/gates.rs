//! Gate algebra shared by the convolutional and fully-connected cells.
//!
//! Pre-activations arrive stacked along the leading axis in gate order
//! input, forget, candidate, output:
//!
//! ```text
//! i = σ(z_i)   f = σ(z_f)   c̃ = tanh(z_c)   o = σ(z_o)
//! c = c̃ ⊙ i + c_prev ⊙ f
//! h = o ⊙ tanh(c)
//! ```

use crate::error::{shape_err, Result};
use crate::kernels::pointwise::{sigmoid_scalar, zip};
use crate::tensor::{Scalar, Tensor};

pub const GATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; GATES] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GateCache<T> {
    pub input_gate: Tensor<T>,
    pub forget_gate: Tensor<T>,
    pub candidate: Tensor<T>,
    pub output_gate: Tensor<T>,
    pub c_prev: Tensor<T>,
    pub c: Tensor<T>,
    pub tanh_c: Tensor<T>,
}

/// Applies the gate nonlinearities to stacked pre-activations `z` and returns
/// `(h, c, cache)`.
pub fn gates_forward<T: Scalar>(z: &Tensor<T>, c_prev: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, GateCache<T>)> {
    let units = c_prev.dims()[0];
    if z.dims()[0] != GATES * units || z.dims()[1..] != c_prev.dims()[1..] {
        return Err(shape_err!(
            "gate pre-activations {:?} do not match cell state {:?}",
            z.dims(),
            c_prev.dims()
        ));
    }
    let part = |g: Gate| z.narrow_outer(g.index() * units, (g.index() + 1) * units);
    let i = part(Gate::Input)?.map(sigmoid_scalar);
    let f = part(Gate::Forget)?.map(sigmoid_scalar);
    let g = part(Gate::Candidate)?.map(|v| v.tanh());
    let o = part(Gate::Output)?.map(sigmoid_scalar);

    let gi = zip(&g, &i, |a, b| a * b);
    let cf = zip(c_prev, &f, |a, b| a * b);
    let c = zip(&gi, &cf, |a, b| a + b);
    let tanh_c = c.map(|v| v.tanh());
    let h = zip(&o, &tanh_c, |a, b| a * b);
    Ok((
        h,
        c.clone(),
        GateCache {
            input_gate: i,
            forget_gate: f,
            candidate: g,
            output_gate: o,
            c_prev: c_prev.clone(),
            c,
            tanh_c,
        },
    ))
}

/// Backpropagates `(dh, dc)` through one step's gate algebra. Returns the
/// stacked pre-activation gradient and the gradient for `c_prev`.
pub fn gates_backward<T: Scalar>(cache: &GateCache<T>, dh: &Tensor<T>, dc: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if !dh.same_dims(&cache.c) || !dc.same_dims(&cache.c) {
        return Err(shape_err!(
            "gate backward: dh {:?}, dc {:?}, state {:?}",
            dh.dims(),
            dc.dims(),
            cache.c.dims()
        ));
    }
    let one = T::one();
    let d_o = zip(dh, &cache.tanh_c, |a, b| a * b);
    // total dc = incoming dc + dh · o · (1 − tanh²c)
    let dh_o = zip(dh, &cache.output_gate, |a, b| a * b);
    let through_h = zip(&dh_o, &cache.tanh_c, |a, t| a * (one - t * t));
    let dc_total = zip(dc, &through_h, |a, b| a + b);

    let d_i = zip(&dc_total, &cache.candidate, |a, b| a * b);
    let d_g = zip(&dc_total, &cache.input_gate, |a, b| a * b);
    let d_f = zip(&dc_total, &cache.c_prev, |a, b| a * b);
    let dc_prev = zip(&dc_total, &cache.forget_gate, |a, b| a * b);

    let dz_i = zip(&d_i, &cache.input_gate, |d, s| d * s * (one - s));
    let dz_f = zip(&d_f, &cache.forget_gate, |d, s| d * s * (one - s));
    let dz_g = zip(&d_g, &cache.candidate, |d, t| d * (one - t * t));
    let dz_o = zip(&d_o, &cache.output_gate, |d, s| d * s * (one - s));
    let dz = Tensor::concat_outer(&[&dz_i, &dz_f, &dz_g, &dz_o])?;
    Ok((dz, dc_prev))
}
