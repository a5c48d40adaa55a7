//! Variational Bayesian 1-D CNN base learner.

mod config;
mod model;
mod predict;
mod train;

pub use config::{BcnnConfig, ConvSpec, KlWeight, REFERENCE_PARAMS, REFERENCE_SHAPES};
pub use model::{init_model, BcnnModel, EpochRecord, TargetScaling, VariationalParam, WeightNoise};
pub use predict::{moment_match, GaussianPrediction};
pub use train::{elbo_loss, stack_inputs, ElboGraph};
