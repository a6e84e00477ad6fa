//! Univariate polynomial bases and total-degree chaos index sets.

mod hermite;
mod interval;
mod multi_index;
pub mod quadrature;

pub use hermite::{hermite_into, HermiteBasis};
pub use interval::IntervalBasis;
pub use multi_index::{binomial, MultiIndexSet};
