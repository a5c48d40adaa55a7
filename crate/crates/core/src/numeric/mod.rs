//! Tensors, reverse-mode differentiation, distributions and the Adam optimizer.

pub mod adam;
pub mod dist;
pub mod graph;
pub mod ops;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use dist::{gaussian_log_prob, laplace_log_prob, GaussianSpec, LaplaceSpec};
pub use graph::{DiffNode, Graph, Var};
pub use ops::{conv1d_forward, dense_forward, global_avg_pool, reparam_sample, softplus};
pub use tensor::Tensor;
