//! Upper bounds from martingales parameterized by truncated Wiener chaos
//! coefficients in tensor-train format.

mod coefficients;
mod objective;
mod optimize;

pub use coefficients::ChaosCoefficients;
pub use objective::{
    dual_gradient, dual_objective, smooth_max, smooth_max_gradient, ChaosSamples, DualObjective, Mollifier,
    FEATURE_GUARD,
};
pub use optimize::{optimize_dual, resimulate_upper, upper_on, DualOptions, DualResult, DualStage};
