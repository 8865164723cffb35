//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PcError>;

#[derive(Debug, Error)]
pub enum PcError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-positive variance {value} at layer {layer}")]
    Precision { layer: usize, value: f64 },

    #[error("layer index {layer} out of range (max {max})")]
    LayerOutOfRange { layer: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient at layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("matrix not positive-definite in {0}")]
    NotPositiveDefinite(&'static str),

    #[error("did not converge: gradient norm {grad_norm:.3e} after {steps} steps")]
    NonConvergence { steps: usize, grad_norm: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PcError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        PcError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
