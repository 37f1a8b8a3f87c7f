//! Dense `f64` matrices with a define-by-run reverse-mode tape.
//!
//! The tape records every kernel the captioning model needs (matmul, add,
//! scale, concatenation, softmax, layer norm, relu, embedding lookup, cross
//! entropy, row cosine) together with the activations its backward rule
//! reads. Parameters live in a [`ParamStore`] and are bound onto a tape per
//! forward pass through a [`Graph`].

mod attention;
pub mod gradcheck;
mod matrix;
mod params;
mod tape;

use thiserror::Error;

pub use attention::{multi_head_attention, AttentionOutput, Mha};
pub use matrix::{cosine, Tensor};
pub use params::{Graph, Linear, Norm, ParamId, ParamStore};
pub use tape::{Gradients, Mask, Tape, Var, LAYER_NORM_EPS};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: [usize; 2], right: [usize; 2] },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
