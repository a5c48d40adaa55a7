//! Leave-one-out model pools, stacking weights and mixture forecasts.

mod matrix;
mod mixture;
mod pool;
mod weights;

pub use matrix::{DescriptorMember, EnsembleDescriptor, PredictionMatrix};
pub use mixture::{
    compose, compose_point, mixture_cdf, mixture_pdf, mixture_variance, point_predict,
    stack_predict, MixtureMode, MixturePrediction, QUANTILE_TOLERANCE,
};
pub use pool::{build_nested_pools, build_pool, train_member, ModelPool, NestedPools, PoolMember};
pub use weights::{
    fit_logscore_weights, fit_pointpred_weights, logscore_objective, mse_objective,
    project_simplex, FitConfig, StackingWeights, WeightMethod, SIMPLEX_TOLERANCE,
};
