//! Deterministic tensor arithmetic with reverse-mode differentiation.
//!
//! The substrate every learnable component in this crate builds on: dense
//! [`Tensor`]s over `f32`/`f64`, a single-use autodiff [`Tape`], the
//! [`AdamState`] optimizer, and the seeded [`Rng`] that all randomness
//! flows through. Training runs in `f32`; gradient verification runs the
//! same code in `f64` against [`gradcheck`].

mod adam;
pub mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, Parameter};
pub use ops::{
    activation, add_channel_bias, conv2d, conv2d_input_grad, conv2d_transpose,
    conv2d_weight_grad, conv_out_extent, conv_transpose_out_extent, matmul, reduce_loss, sigmoid,
    softmax_rows, transpose2, Activation, LossKind, LEAKY_SLOPE,
};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::{Element, Tensor};

use thiserror::Error;

/// Errors from tensor construction, shape checks, and the tape.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("buffer of length {actual} does not fit shape {shape:?} (expected {expected})")]
    BadBuffer {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("backward already ran on this tape; record a fresh forward pass")]
    TapeConsumed,
    #[error("the loss node does not belong to this tape")]
    NotOnTape,
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
}
