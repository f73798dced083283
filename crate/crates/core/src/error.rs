use thiserror::Error;

use crate::tensor::Shape4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape4,
        rhs: Shape4,
    },
    #[error("{op}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: spatial extent {h}x{w} is not divisible by {factor}")]
    NotDivisible {
        op: &'static str,
        h: usize,
        w: usize,
        factor: usize,
    },
    #[error("buffer of length {len} does not match shape {shape}")]
    LengthMismatch { len: usize, shape: Shape4 },
    #[error("invalid shape {0}: every extent must be positive")]
    EmptyShape(Shape4),
    #[error("unsupported kernel size {0} (expected 1 or 3)")]
    KernelSize(usize),
    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("batch norm in eval mode before running statistics were initialized")]
    StatsUninitialized,
    #[error("invalid pyramid: {0}")]
    Pyramid(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
