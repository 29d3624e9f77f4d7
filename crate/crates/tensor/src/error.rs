use thiserror::Error;

use crate::Shape;

/// Errors raised by tensor construction, graph operations and parameter I/O.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: operand `{operand}` has shape {actual}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        operand: &'static str,
        expected: String,
        actual: Shape,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("data length {len} does not match shape {shape} ({} elements)", shape.numel())]
    DataLength { shape: Shape, len: usize },

    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalar(Shape),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn mismatch(
    op: &'static str,
    operand: &'static str,
    expected: impl Into<String>,
    actual: Shape,
) -> TensorError {
    TensorError::ShapeMismatch { op, operand, expected: expected.into(), actual }
}

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument { op, reason: reason.into() }
}
