//! From-scratch tensor math and the fixed two-conv-block network.
//!
//! The operations here are the reference implementations: double precision,
//! shape-checked, and verified against naive oracles and finite differences
//! in the test suite. The training loop runs on a faster batched engine that
//! shares the same arithmetic kernels; inference and evaluation go through
//! [`ModelWeights::forward`].

pub mod adam;
pub mod io;

mod model;
mod ops;
mod tensor;

pub use model::{argmax_lowest, ModelSpec, ModelWeights, Prediction};
pub use ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax_xent, MaxPoolCache, SoftmaxXent,
};
pub use tensor::Tensor;

pub(crate) use ops::{col2im3x3, im2col3x3, maxpool2, unpool2};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch {
        context: &'static str,
        detail: String,
    },
    #[error("max pooling needs even spatial dims, got {h}x{w}")]
    OddDimension { h: usize, w: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("model must have 2 or 3 classes, got {0}")]
    BadClassCount(usize),
}

pub(crate) fn shape_err(context: &'static str, detail: impl Into<String>) -> NnError {
    NnError::ShapeMismatch {
        context,
        detail: detail.into(),
    }
}
