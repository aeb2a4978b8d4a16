//! Minimal 1-D convolutional network engine: layers, a branching network
//! graph with manual reverse-mode differentiation, SGD with momentum and a
//! finite-difference gradient checker.

pub mod activation;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
mod linalg;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use activation::{argmax, relu, softmax};
pub use error::{NnError, Result};
pub use graph::{ForwardCache, Gradients, GraphBuilder, MapShape, Mode, NetworkGraph, NodeId, Op, ParamBlock};
pub use layers::{conv1d_forward, dense_forward, maxpool_backward, maxpool_forward, BatchNorm, Conv1d, Dense, Dropout, MaxPool1d};
pub use loss::{cross_entropy, softmax_cross_entropy, LOG_FLOOR};
pub use optim::{SgdMomentum, StepDecay};
pub use tensor::Tensor;
