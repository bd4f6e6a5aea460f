//! Infinitesimal flows and diffusion discretizations.

pub mod diffusion;
pub mod ode;

pub use diffusion::{probability_flow_ode, BetaSchedule, DdpmSchedule, GaussianScore, ProbabilityFlow, ScoreField};
pub use ode::{cov_continuous, decode_continuous, integrate_flow, FlowResult, LinearField, Reversed, TraceMode, VectorField};
