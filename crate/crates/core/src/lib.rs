// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bcnn;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod numeric;

pub use error::{Error, Result};
