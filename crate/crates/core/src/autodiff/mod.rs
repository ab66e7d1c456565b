//! Minimal reverse-mode automatic differentiation, the two policy networks'
//! parameters, the optimizer and the checkpoint format.

mod adam;
mod array;
pub mod checkpoint;
mod params;
mod tape;

pub use adam::Adam;
pub use array::Array;
pub use params::{mlp_forward, Mlp, MlpVars, ParamStore, ParamVars, DEFAULT_HIDDEN};
pub use tape::{clipped_logistic, Gradients, Tape, Var, LN_3};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("input has {got} features, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("non-finite gradient at flat index {index}")]
    NonFiniteGradient { index: usize },
    #[error("parameter and gradient lengths differ ({params} vs {grads})")]
    LengthMismatch { params: usize, grads: usize },
}
