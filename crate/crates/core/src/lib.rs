//! Pricing Bermudan options with tensor-train regression and tensor-train
//! dual martingales.

mod error;
mod linalg;
pub mod bases;
pub mod dual;
pub mod manifold;
pub mod market;
pub mod primal;
pub mod selfcheck;
pub mod tt;

pub use error::{Error, Result};
pub use tt::{Core, DenseTensor, Orthogonality, Side, TensorTrain};
