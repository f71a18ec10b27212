//! Recurrent aggregators: the convolutional LSTM and the fully-connected
//! LSTM baseline, with sequence unrolling and backpropagation through time.

mod convlstm;
mod gates;
mod lstm;

pub use convlstm::{
    convlstm_sequence, convlstm_sequence_backward, convlstm_step, convlstm_step_cached, ConvLstmParams,
    ConvLstmSequenceCache, ConvLstmState, ConvLstmStepCache,
};
pub use gates::{gates_backward, gates_forward, Gate, GateCache, GATES};
pub use lstm::{lstm_sequence, lstm_sequence_backward, lstm_step, lstm_step_cached, LstmParams, LstmSequenceCache, LstmState, LstmStepCache};

use crate::tensor::Tensor;

/// Gradients of a sequence loss with respect to a cell's weights, its inputs
/// and its initial state.
#[derive(Debug, Clone)]
pub struct CellGrads<T> {
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub bias: Tensor<T>,
    pub inputs: Vec<Tensor<T>>,
    pub h0: Tensor<T>,
    pub c0: Tensor<T>,
}
