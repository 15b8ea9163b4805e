//! Federated training with fractional-order local dynamics and
//! roughness-informed proximal control, plus the battery-electric-vehicle
//! energy data layer and evaluation engine used to exercise it.

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bevdata;
pub mod diagnostics;
pub mod error;
pub mod fedcore;
pub mod fracopt;
pub mod metrics;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use model::{MlpModel, MlpSpec, Sample};
pub use numerics::{ParamVector, Purpose, RngStream};
