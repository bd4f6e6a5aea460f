//! Split flows: a deterministic core encoder with a stochastic decoder that
//! spreads each code's mass over its fiber.

pub mod gibbs;
pub mod hierarchical;
pub mod nf;
pub mod piecewise;

use std::f64::consts::TAU;

use nalgebra::DVector;

use crate::analytic::{arg, circular_diff, DonutTarget, GAUSS_STD};
use crate::error::{check_dim, Result};
use crate::injective::{cov_autoencoder, InjectivePair, LinearBottleneck};
use crate::numeric::density::{log_normal_1d, Density};
use crate::numeric::linalg::logdet_lu;
use crate::numeric::report::CovReport;
use crate::numeric::rng::{std_normal, StreamRng};
use crate::stochastic::ConditionalKernel;

pub use gibbs::{GibbsDonutSplit, GibbsFiberConditional, LineFiber};
pub use hierarchical::{
    check_orthogonal_rows, core_dims, cov_disentangled, cov_hierarchical, pointwise_mi, rank_core_dims, CodeTree, DimScore,
};
pub use nf::{cov_split_nf, SplitNf};
pub use piecewise::{cov_piecewise_constant, PiecewiseConstant};

pub const TERM_FIBER_MASS: &str = "log p(F(f(x)))";
pub const TERM_FIBER_COND: &str = "log p(x|F(f(x)))";

/// Deterministic core encoder, fiber masses and fiber conditionals.
pub trait SplitModel: Send + Sync {
    fn dim(&self) -> usize;

    /// `f(x)`, or `None` where the encoder is undefined.
    fn encode(&self, x: &[f64]) -> Option<Vec<f64>>;

    /// `log p(F(z))` as a density over codes.
    fn log_fiber_mass(&self, z: &[f64]) -> f64;

    /// `log p(X=x | F(z))`; `-inf` for `x` off the fiber of `z`.
    fn log_fiber_conditional(&self, x: &[f64], z: &[f64]) -> f64;

    fn sample(&self, rng: &mut StreamRng) -> Vec<f64>;
}

/// `log p(x) = log p(F(f(x))) + log p(x | F(f(x)))`.
pub fn cov_split(model: &dyn SplitModel, x: &[f64]) -> Result<CovReport> {
    check_dim(model.dim(), x.len())?;
    let Some(z) = model.encode(x) else {
        return Ok(CovReport::outside("core encoder undefined at x"));
    };
    let cond = model.log_fiber_conditional(x, &z);
    if cond == f64::NEG_INFINITY {
        return Ok(CovReport::outside("x outside the fiber support"));
    }
    Ok(CovReport::from_terms([(TERM_FIBER_MASS, model.log_fiber_mass(&z)), (TERM_FIBER_COND, cond)]))
}

/// Annulus as a split model: the core code is the polar angle with uniform
/// fiber mass, the fiber is the ray at that angle and the conditional is
/// the radial law per unit area, `p(r)/r`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DonutSplit {
    pub target: DonutTarget,
}

/// Angle tolerance for "x lies on the ray of z".
const RAY_TOL: f64 = 1e-9;

impl SplitModel for DonutSplit {
    fn dim(&self) -> usize {
        2
    }
    fn encode(&self, x: &[f64]) -> Option<Vec<f64>> {
        (x[0] != 0.0 || x[1] != 0.0).then(|| vec![arg(x)])
    }
    fn log_fiber_mass(&self, z: &[f64]) -> f64 {
        if (0.0..TAU).contains(&z[0]) {
            -TAU.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn log_fiber_conditional(&self, x: &[f64], z: &[f64]) -> f64 {
        let r = x[0].hypot(x[1]);
        if r == 0.0 || circular_diff(arg(x), z[0]).abs() > RAY_TOL {
            return f64::NEG_INFINITY;
        }
        self.target.log_radial_density(r) - r.ln()
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        crate::analytic::donut_split_sample(&self.target, rng)
    }
}

/// Anisotropic Gaussian as a split model: core code `x₁` with standard
/// normal mass, fiber conditional `N(x₂ | 0, σ₂²)` along the vertical line.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianSplit;

impl SplitModel for GaussianSplit {
    fn dim(&self) -> usize {
        2
    }
    fn encode(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![x[0]])
    }
    fn log_fiber_mass(&self, z: &[f64]) -> f64 {
        log_normal_1d(z[0], 0.0, GAUSS_STD[0])
    }
    fn log_fiber_conditional(&self, x: &[f64], z: &[f64]) -> f64 {
        if x[0] != z[0] {
            return f64::NEG_INFINITY;
        }
        log_normal_1d(x[1], 0.0, GAUSS_STD[1])
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![GAUSS_STD[0] * std_normal(rng), GAUSS_STD[1] * std_normal(rng)]
    }
}

/// Fiber conditional collapsed to a point mass at the representative
/// `g(z)`: the split model degenerates to the injective one and the result
/// is a density on the decoder manifold, zero elsewhere.
pub struct DeltaSplit<'a> {
    pub pair: InjectivePair<'a>,
    pub prior: &'a dyn Density,
}

impl SplitModel for DeltaSplit<'_> {
    fn dim(&self) -> usize {
        self.pair.decoder.dim_out()
    }
    fn encode(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.pair.encoder.apply(x))
    }
    fn log_fiber_mass(&self, z: &[f64]) -> f64 {
        cov_autoencoder(self.pair.decoder, self.prior, z).map_or(f64::NAN, |r| r.log_density)
    }
    fn log_fiber_conditional(&self, x: &[f64], _z: &[f64]) -> f64 {
        if self.pair.project(x).is_ok() {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.pair.decoder.apply(&self.prior.sample(rng))
    }
}

/// `log p(x) = log p(Z=W⁺x) − ½ log|det(WᵀW)| + log p(Z_⊥=U_⊥ᵀx | Z=W⁺x)`.
/// `U_⊥` is orthonormal, so it contributes no determinant.
pub fn cov_linear_split(
    lb: &LinearBottleneck,
    prior: &dyn Density,
    nullspace: &dyn ConditionalKernel,
    x: &[f64],
) -> Result<CovReport> {
    check_dim(lb.data_dim(), x.len())?;
    check_dim(lb.code_dim(), prior.dim())?;
    check_dim(lb.code_dim(), nullspace.cond_dim())?;
    check_dim(lb.data_dim() - lb.code_dim(), nullspace.target_dim())?;
    let xv = DVector::from_column_slice(x);
    let z = &lb.pinv * &xv;
    let zp = lb.u_perp.transpose() * &xv;
    let gram = lb.w.transpose() * &lb.w;
    let h = 0.5 * logdet_lu(&gram)?;
    Ok(CovReport::from_terms([
        ("log p(Z=W⁺x)", prior.log_density(z.as_slice())),
        ("-½ log|det(WᵀW)|", -h),
        ("log p(Z_⊥=U_⊥ᵀx|Z=W⁺x)", nullspace.log_density(zp.as_slice(), z.as_slice())),
    ]))
}
