use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("gradients requested before a backward pass")]
    NoBackward,
    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),
}
