//! Convolutional LSTM cell.
//!
//! All four gate kernels are stored stacked along the output-channel axis
//! (`[4·Ch, Cin, k, k]` for the input path, `[4·Ch, Ch, k, k]` for the hidden
//! path) and evaluated with one convolution per path. Each output channel of
//! [`conv2d`] is accumulated independently of the others, so the stacked
//! evaluation is bit-identical to four separate per-gate convolutions.

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::{add, conv2d, conv2d_grad};
use crate::layers::{xavier_init, Param};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::gates::{gates_backward, gates_forward, Gate, GateCache, GATES};
use super::CellGrads;

#[derive(Debug, Clone)]
pub struct ConvLstmParams<T> {
    pub w_x: Param<T>,
    pub w_h: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> ConvLstmParams<T> {
    /// Xavier-initialized gate kernels (fans `Cin·k²` / `Ch·k²` per gate), zero biases.
    pub fn init(prefix: &str, input_channels: usize, hidden: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(arg_err!("convlstm kernel size must be odd, got {kernel}"));
        }
        let rf = kernel * kernel;
        let w_x = xavier_init(&[GATES * hidden, input_channels, kernel, kernel], input_channels * rf, hidden * rf, rng)?;
        let w_h = xavier_init(&[GATES * hidden, hidden, kernel, kernel], hidden * rf, hidden * rf, rng)?;
        Self::from_tensors(prefix, w_x, w_h, Tensor::zeros(&[GATES * hidden]))
    }

    pub fn zeros(prefix: &str, input_channels: usize, hidden: usize, kernel: usize) -> Result<Self> {
        Self::from_tensors(
            prefix,
            Tensor::zeros(&[GATES * hidden, input_channels, kernel, kernel]),
            Tensor::zeros(&[GATES * hidden, hidden, kernel, kernel]),
            Tensor::zeros(&[GATES * hidden]),
        )
    }

    pub fn from_tensors(prefix: &str, w_x: Tensor<T>, w_h: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[g4, _, k, k2] = w_x.dims() else {
            return Err(shape_err!("convlstm input kernels must be rank 4, got {:?}", w_x.dims()));
        };
        if g4 % GATES != 0 || k != k2 || k % 2 == 0 {
            return Err(shape_err!("convlstm input kernels have bad dims {:?}", w_x.dims()));
        }
        let ch = g4 / GATES;
        w_h.expect_dims(&[g4, ch, k, k], "convlstm hidden kernels")?;
        bias.expect_dims(&[g4], "convlstm bias")?;
        Ok(Self {
            w_x: Param::new(format!("{prefix}.w_x"), w_x),
            w_h: Param::new(format!("{prefix}.w_h"), w_h),
            bias: Param::new(format!("{prefix}.bias"), bias),
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_x.value.dims()[0] / GATES
    }

    pub fn input_channels(&self) -> usize {
        self.w_x.value.dims()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w_x.value.dims()[2]
    }

    pub fn pad(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    /// `4·(k²·Cin·Ch + k²·Ch² + Ch)`.
    pub fn param_count(&self) -> usize {
        let (k, cin, ch) = (self.kernel(), self.input_channels(), self.hidden());
        GATES * (k * k * cin * ch + k * k * ch * ch + ch)
    }

    fn gate_rows(&self, g: Gate) -> (usize, usize) {
        let ch = self.hidden();
        (g.index() * ch, (g.index() + 1) * ch)
    }

    /// Input-path kernel of one gate, `[Ch, Cin, k, k]`.
    pub fn gate_input_kernel(&self, g: Gate) -> Tensor<T> {
        let (a, b) = self.gate_rows(g);
        self.w_x.value.narrow_outer(a, b).expect("gate rows in range")
    }

    /// Hidden-path kernel of one gate, `[Ch, Ch, k, k]`.
    pub fn gate_hidden_kernel(&self, g: Gate) -> Tensor<T> {
        let (a, b) = self.gate_rows(g);
        self.w_h.value.narrow_outer(a, b).expect("gate rows in range")
    }

    pub fn gate_bias(&self, g: Gate) -> Tensor<T> {
        let (a, b) = self.gate_rows(g);
        self.bias.value.narrow_outer(a, b).expect("gate rows in range")
    }

    pub fn params(&self) -> [&Param<T>; 3] {
        [&self.w_x, &self.w_h, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> ConvLstmState<T> {
    pub fn zeros(hidden: usize, height: usize, width: usize) -> Self {
        Self {
            h: Tensor::zeros(&[hidden, height, width]),
            c: Tensor::zeros(&[hidden, height, width]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvLstmStepCache<T> {
    pub input: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub gates: GateCache<T>,
}

#[derive(Debug, Clone)]
pub struct ConvLstmSequenceCache<T> {
    pub steps: Vec<ConvLstmStepCache<T>>,
    pub final_state: ConvLstmState<T>,
}

fn check_step<T: Scalar>(input: &Tensor<T>, state: &ConvLstmState<T>, p: &ConvLstmParams<T>) -> Result<()> {
    let &[cin, h, w] = input.dims() else {
        return Err(shape_err!("convlstm input must be [C,H,W], got {:?}", input.dims()));
    };
    if cin != p.input_channels() {
        return Err(shape_err!(
            "convlstm input has {cin} channels, cell expects {}",
            p.input_channels()
        ));
    }
    let want = [p.hidden(), h, w];
    state.h.expect_dims(&want, "convlstm hidden state")?;
    state.c.expect_dims(&want, "convlstm cell state")?;
    Ok(())
}

/// One step of the recurrence, keeping the activations for BPTT.
pub fn convlstm_step_cached<T: Scalar>(
    input: &Tensor<T>,
    state: &ConvLstmState<T>,
    p: &ConvLstmParams<T>,
) -> Result<(ConvLstmState<T>, ConvLstmStepCache<T>)> {
    check_step(input, state, p)?;
    let pad = p.pad();
    let zx = conv2d(input, &p.w_x.value, &p.bias.value, 1, pad)?;
    let zh = conv2d(&state.h, &p.w_h.value, &Tensor::zeros(&[GATES * p.hidden()]), 1, pad)?;
    let z = add(&zx, &zh)?;
    let (h, c, gates) = gates_forward(&z, &state.c)?;
    Ok((
        ConvLstmState { h, c },
        ConvLstmStepCache {
            input: input.clone(),
            h_prev: state.h.clone(),
            gates,
        },
    ))
}

pub fn convlstm_step<T: Scalar>(input: &Tensor<T>, state: &ConvLstmState<T>, p: &ConvLstmParams<T>) -> Result<ConvLstmState<T>> {
    convlstm_step_cached(input, state, p).map(|(s, _)| s)
}

/// Folds the cell over `inputs` from `init`; returns the final hidden state
/// and the per-step cache.
pub fn convlstm_sequence<T: Scalar>(
    inputs: &[Tensor<T>],
    p: &ConvLstmParams<T>,
    init: &ConvLstmState<T>,
) -> Result<(Tensor<T>, ConvLstmSequenceCache<T>)> {
    if inputs.is_empty() {
        return Err(arg_err!("convlstm sequence needs at least one input"));
    }
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        if !x.same_dims(&inputs[0]) {
            return Err(shape_err!(
                "convlstm sequence inputs differ: {:?} vs {:?}",
                x.dims(),
                inputs[0].dims()
            ));
        }
        let (next, cache) = convlstm_step_cached(x, &state, p)?;
        steps.push(cache);
        state = next;
    }
    Ok((
        state.h.clone(),
        ConvLstmSequenceCache {
            steps,
            final_state: state,
        },
    ))
}

/// Backpropagation through time from a gradient on the final hidden state.
pub fn convlstm_sequence_backward<T: Scalar>(
    p: &ConvLstmParams<T>,
    cache: &ConvLstmSequenceCache<T>,
    grad_h_final: &Tensor<T>,
) -> Result<CellGrads<T>> {
    grad_h_final.expect_dims(cache.final_state.h.dims(), "convlstm final hidden gradient")?;
    let pad = p.pad();
    let mut g_wx = Tensor::zeros(p.w_x.value.dims());
    let mut g_wh = Tensor::zeros(p.w_h.value.dims());
    let mut g_b = Tensor::zeros(p.bias.value.dims());
    let mut g_inputs = Vec::with_capacity(cache.steps.len());
    let mut dh = grad_h_final.clone();
    let mut dc = Tensor::zeros(grad_h_final.dims());
    for step in cache.steps.iter().rev() {
        let (dz, dc_prev) = gates_backward(&step.gates, &dh, &dc)?;
        let gx = conv2d_grad(&step.input, &p.w_x.value, &dz, 1, pad)?;
        let gh = conv2d_grad(&step.h_prev, &p.w_h.value, &dz, 1, pad)?;
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
