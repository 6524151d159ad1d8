use alloc::boxed::Box;
use alloc::string::String;

use crate::network::NetworkParams;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },

    #[error("data of length {len} cannot fill a {rows}x{cols} tensor")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("log of non-positive entry {value}")]
    NonPositiveLog { value: f64 },

    #[error("{op}: expected a square matrix, got {}x{}", shape.0, shape.1)]
    NotSquare { op: &'static str, shape: (usize, usize) },

    #[error(
        "matrix not positive definite after jitter escalation{} (smallest eigenvalue ~ {min_eigenvalue:e})",
        match step { Some(k) => alloc::format!(" at step {k}"), None => String::new() }
    )]
    NotPositiveDefinite { step: Option<usize>, min_eigenvalue: f64 },

    #[error("backward requires a scalar loss, got {}x{}", shape.0, shape.1)]
    NonScalarLoss { shape: (usize, usize) },

    #[error("not a permutation of 0..{len}")]
    InvalidPermutation { len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contextual input mode requires context features")]
    MissingContext,

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, last_good: Box<NetworkParams> },
}
