//! Finite Gaussian Neuron networks: autodiff, layers, conversion from
//! classical networks, training, adversarial attacks, and evaluation.

pub mod attacks;
pub mod autodiff;
pub mod config;
pub mod convert;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model_io;
pub mod netgraph;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
