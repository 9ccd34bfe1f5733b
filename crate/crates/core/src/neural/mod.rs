//! Minimal differentiable numeric core: the layers the enhancement model
//! needs, a reverse-mode tape and the Adam optimizer.

mod adam;
mod layers;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{
    conv1d_freq, lstm_step, selu_tensor, Conv1dParams, Linear, LstmLayerParams, LstmState,
    SELU_ALPHA, SELU_LAMBDA,
};
pub use tape::{selu, Gradients, Seg, Tape, Var};
pub use tensor::{ParamId, ParamStore, Scalar, Tensor};
