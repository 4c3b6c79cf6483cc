//! Numeric substrate: tensors, the autodiff tape, and trainable parameters.

mod param;
mod tape;
mod tensor;

pub use param::{Param, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{broadcast_shapes, fmt_shape, reduce_to_shape, Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum SubstrateError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("numeric failure in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },
}
