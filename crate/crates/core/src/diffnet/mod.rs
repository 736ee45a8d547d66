//! Minimal differentiable dense classifier.
//!
//! Layers are ordered from the input (depth 0) to the output (depth L-1).
//! Depth order matters: selective reset restores a suffix of this order.

mod loss;
mod matrix;
mod network;
mod params;

pub use loss::{
    cross_entropy_and_grad, entropy_loss, entropy_loss_and_grad, log_softmax_rows, row_entropy,
    softmax_rows,
};
pub use matrix::Matrix;
pub use network::{Activation, Layer, Network, Trace};
pub use params::{GradientSet, LayerParams, ParamSet, ParameterSnapshot};
