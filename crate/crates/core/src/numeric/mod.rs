//! Numeric foundation: dual numbers and the Jacobian engine, pivoted-LU
//! determinants, reproducible random streams, integration oracles, and the
//! distribution and report types shared by every evaluator.

pub mod density;
pub mod dual;
pub mod integrate;
pub mod linalg;
pub mod map;
pub mod report;
pub mod rng;

pub use density::{AnalyticTarget, CodeDistribution, Density, DiagGaussian, Discrete, Gmm, StandardNormal, UniformBox};
pub use dual::{Dual, Dual64, Real};
pub use integrate::{mc_integrate, quad_integrate_1d, quad_integrate_2d, McEstimate};
pub use linalg::{half_logdet_gram, logdet_lu};
pub use map::{jacobian, jvp, AffineMap, DiffConfig, DiffMode, Identity, JacobianMatrix, Map, Point, Smooth};
pub use report::{CovReport, LogDensity, Term};
pub use rng::{seeded, RngStream, StreamRng};
