use thiserror::Error;

/// Failure modes shared by every evaluator in the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("rank-deficient matrix: pivot {pivot:e} below threshold {threshold:e}")]
    RankDeficient { pivot: f64, threshold: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("outside support: {0}")]
    OutsideSupport(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("trajectory blow-up at t = {t}: |z| = {norm:e}")]
    TrajectoryBlowUp { t: f64, norm: f64 },
    #[error("point is off the manifold by {distance:e}")]
    OffManifold { distance: f64 },
    #[error("orthogonal-rows constraint violated: ratio {ratio:e}")]
    OrthogonalRows { ratio: f64 },
    #[error("conformality violated: relative deviation {deviation:e}")]
    Conformality { deviation: f64 },
    #[error("left-inverse violated: |f(g(z)) - z| = {error:e}")]
    LeftInverse { error: f64 },
    #[error("spectral norm {norm} of J - I is not below 1")]
    SpectralBound { norm: f64 },
    #[error("coordinate {coord} is not monotone: derivative {derivative}")]
    NonMonotone { coord: usize, derivative: f64 },
    #[error("{count} of {n} integrand draws were non-finite")]
    TooManyNonFinite { count: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
