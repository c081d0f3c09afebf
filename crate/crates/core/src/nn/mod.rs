//! Dense numeric core: matrices, feed-forward networks, optimizer and
//! gradient verification.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod softmax;

pub use adam::{AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Precision};
pub use matrix::{Matrix, Scalar};
pub use mlp::{
    init_params, Activation, ForwardTrace, Layer, LayerGrads, Mlp, MlpGrads, NetSpec, OutputHead,
};
pub use softmax::{softmax_backward, softmax_nll, softmax_rows};
