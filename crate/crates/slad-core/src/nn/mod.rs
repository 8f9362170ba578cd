//! Minimal dense network engine: row-major matrices, dense layers with a
//! leaky rectifier or sigmoid, backprop, Adam, softmax/divergence losses,
//! and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layer;
mod loss;
mod matrix;

pub use adam::AdamState;
pub use gradcheck::finite_diff_check;
pub use layer::{Activation, DenseLayer, ForwardCache, LayerGrads, MlpNet, Workspace, LEAKY_SLOPE};
pub use loss::{jsd, jsd_softmax_grad, softmax, PROB_FLOOR};
pub use matrix::Matrix;

pub(crate) use loss::jsd_grad_from_probs;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
