//! Fully-connected LSTM: the same gate algebra as the convolutional cell
//! with matrix products in place of convolutions.

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::{add, affine_grad, matmul_affine};
use crate::layers::{xavier_init, Param};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::gates::{gates_backward, gates_forward, GateCache, GATES};
use super::CellGrads;

#[derive(Debug, Clone)]
pub struct LstmParams<T> {
    /// `[4·units, in_dim]`
    pub w_x: Param<T>,
    /// `[4·units, units]`
    pub w_h: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn init(prefix: &str, in_dim: usize, units: usize, rng: &mut Rng) -> Result<Self> {
        let w_x = xavier_init(&[GATES * units, in_dim], in_dim, units, rng)?;
        let w_h = xavier_init(&[GATES * units, units], units, units, rng)?;
        Self::from_tensors(prefix, w_x, w_h, Tensor::zeros(&[GATES * units]))
    }

    pub fn zeros(prefix: &str, in_dim: usize, units: usize) -> Result<Self> {
        Self::from_tensors(
            prefix,
            Tensor::zeros(&[GATES * units, in_dim]),
            Tensor::zeros(&[GATES * units, units]),
            Tensor::zeros(&[GATES * units]),
        )
    }

    pub fn from_tensors(prefix: &str, w_x: Tensor<T>, w_h: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[g4, _] = w_x.dims() else {
            return Err(shape_err!("lstm input matrix must be rank 2, got {:?}", w_x.dims()));
        };
        if g4 % GATES != 0 {
            return Err(shape_err!("lstm input matrix rows {g4} not divisible by {GATES}"));
        }
        let units = g4 / GATES;
        w_h.expect_dims(&[g4, units], "lstm hidden matrix")?;
        bias.expect_dims(&[g4], "lstm bias")?;
        Ok(Self {
            w_x: Param::new(format!("{prefix}.w_x"), w_x),
            w_h: Param::new(format!("{prefix}.w_h"), w_h),
            bias: Param::new(format!("{prefix}.bias"), bias),
        })
    }

    pub fn units(&self) -> usize {
        self.w_x.value.dims()[0] / GATES
    }

    pub fn in_dim(&self) -> usize {
        self.w_x.value.dims()[1]
    }

    /// `4·((in_dim + units)·units + units)`.
    pub fn param_count(&self) -> usize {
        let (n, u) = (self.in_dim(), self.units());
        GATES * ((n + u) * u + u)
    }

    pub fn params(&self) -> [&Param<T>; 3] {
        [&self.w_x, &self.w_h, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(units: usize) -> Self {
        Self {
            h: Tensor::zeros(&[units]),
            c: Tensor::zeros(&[units]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    pub input: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub gates: GateCache<T>,
}

#[derive(Debug, Clone)]
pub struct LstmSequenceCache<T> {
    pub steps: Vec<LstmStepCache<T>>,
    pub final_state: LstmState<T>,
}

pub fn lstm_step_cached<T: Scalar>(x: &Tensor<T>, state: &LstmState<T>, p: &LstmParams<T>) -> Result<(LstmState<T>, LstmStepCache<T>)> {
    if x.dims() != [p.in_dim()] {
        return Err(shape_err!("lstm input {:?}, expected [{}]", x.dims(), p.in_dim()));
    }
    state.h.expect_dims(&[p.units()], "lstm hidden state")?;
    state.c.expect_dims(&[p.units()], "lstm cell state")?;
    let zx = matmul_affine(x, &p.w_x.value, &p.bias.value)?;
    let zh = matmul_affine(&state.h, &p.w_h.value, &Tensor::zeros(&[GATES * p.units()]))?;
    let z = add(&zx, &zh)?;
    let (h, c, gates) = gates_forward(&z, &state.c)?;
    Ok((
        LstmState { h, c },
        LstmStepCache {
            input: x.clone(),
            h_prev: state.h.clone(),
            gates,
        },
    ))
}

pub fn lstm_step<T: Scalar>(x: &Tensor<T>, state: &LstmState<T>, p: &LstmParams<T>) -> Result<LstmState<T>> {
    lstm_step_cached(x, state, p).map(|(s, _)| s)
}

pub fn lstm_sequence<T: Scalar>(inputs: &[Tensor<T>], p: &LstmParams<T>, init: &LstmState<T>) -> Result<(Tensor<T>, LstmSequenceCache<T>)> {
    if inputs.is_empty() {
        return Err(arg_err!("lstm sequence needs at least one input"));
    }
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, cache) = lstm_step_cached(x, &state, p)?;
        steps.push(cache);
        state = next;
    }
    Ok((
        state.h.clone(),
        LstmSequenceCache {
            steps,
            final_state: state,
        },
    ))
}

pub fn lstm_sequence_backward<T: Scalar>(p: &LstmParams<T>, cache: &LstmSequenceCache<T>, grad_h_final: &Tensor<T>) -> Result<CellGrads<T>> {
    grad_h_final.expect_dims(&[p.units()], "lstm final hidden gradient")?;
    let mut g_wx = Tensor::zeros(p.w_x.value.dims());
    let mut g_wh = Tensor::zeros(p.w_h.value.dims());
    let mut g_b = Tensor::zeros(p.bias.value.dims());
    let mut g_inputs = Vec::with_capacity(cache.steps.len());
    let mut dh = grad_h_final.clone();
    let mut dc = Tensor::zeros(&[p.units()]);
    for step in cache.steps.iter().rev() {
        let (dz, dc_prev) = gates_backward(&step.gates, &dh, &dc)?;
        let gx = affine_grad(&step.input, &p.w_x.value, &dz)?;
        let gh = affine_grad(&step.h_prev, &p.w_h.value, &dz)?;
        g_wx.add_assign(&gx.w)?;
        g_wh.add_assign(&gh.w)?;
        g_b.add_assign(&gx.b)?;
        g_inputs.push(gx.x);
        dh = gh.x;
        dc = dc_prev;
    }
    g_inputs.reverse();
    Ok(CellGrads {
        w_x: g_wx,
        w_h: g_wh,
        bias: g_b,
        inputs: g_inputs,
        h0: dh,
        c0: dc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_zero_output() {
        let p = LstmParams::<f64>::zeros("l", 3, 4).unwrap();
        let x = Tensor::randn(&[3], &mut Rng::new(1));
        let s = lstm_step(&x, &LstmState::zeros(4), &p).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_unit_hand_case() {
        let p = LstmParams::<f64>::from_tensors(
            "l",
            Tensor::full(&[4, 1], 1.0),
            Tensor::full(&[4, 1], 1.0),
            Tensor::zeros(&[4]),
        )
        .unwrap();
        let s = lstm_step(&Tensor::zeros(&[1]), &LstmState::zeros(1), &p).unwrap();
        // σ(0)·tanh(tanh(0)·σ(0) + 0·σ(0)) = 0.5·tanh(0) = 0
        assert_eq!(s.h.data(), &[0.0]);
        assert_eq!(s.c.data(), &[0.0]);
    }

    #[test]
    fn param_count_formula() {
        let p = LstmParams::<f32>::zeros("l", 7, 5).unwrap();
        let stored: usize = p.params().iter().map(|q| q.value.len()).sum();
        assert_eq!(p.param_count(), stored);
    }

    #[test]
    fn input_dims_mismatch() {
        let p = LstmParams::<f64>::zeros("l", 3, 2).unwrap();
        assert!(lstm_step(&Tensor::zeros(&[4]), &LstmState::zeros(2), &p).is_err());
    }
}
