pub mod analytic;
pub mod bijective;
pub mod continuous;
pub mod diagnostics;
pub mod error;
pub mod injective;
pub mod jacobians;
pub mod model;
pub mod numeric;
pub mod split;
pub mod stochastic;

pub use error::{Error, Result};
