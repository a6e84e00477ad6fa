//! Longstaff–Schwartz regression with tensor-train continuation values.

mod als;
mod ls;
mod value;

pub use als::{fit_value_function, AlsOptions, FitReport, MicroStep, RegressionProblem};
pub use ls::{
    domain_bounds, longstaff_schwartz, resimulate_lower, resimulate_lower_on, DateReport, Estimate,
    LsOptions, LsResult,
};
pub use value::{ExerciseRule, ValueFunctional};
