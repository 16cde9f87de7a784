//! Tensors, the autodiff tape, parameters, optimisation and gradient checking.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod rng;
mod schedule;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use gradcheck::{grad_check, grad_check_store, GradCheck};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use optim::{adam_step, Adam, AdamConfig};
pub use params::{GradPolicy, Parameter, ParameterStore};
pub use rng::{RngStreams, Stream};
pub use schedule::Schedule;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{0}: softmax over an all-masked axis")]
    AllMasked(&'static str),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("missing gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("step must be >= 1")]
    ZeroStep,
    #[error("finite-difference eps {0} outside [1e-7, 1e-3]")]
    BadEps(f64),
}
