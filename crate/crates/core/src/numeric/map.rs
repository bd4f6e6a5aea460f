//! Differentiable maps and the Jacobian engine.

use nalgebra::DMatrix;

use super::dual::{Dual64, Real};
use crate::error::{check_dim, Error, Result};

/// `rows = dim_out`, `cols = dim_in`.
pub type JacobianMatrix = DMatrix<f64>;

/// Object-safe view of a differentiable map `R^dim_in -> R^dim_out`.
pub trait Map: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_dual(&self, x: &[Dual64]) -> Vec<Dual64>;
}

/// Maps written generically over the scalar type. Every `Smooth` type is a
/// [`Map`].
pub trait Smooth: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R>;
}

impl<T: Smooth> Map for T {
    fn dim_in(&self) -> usize {
        Smooth::dim_in(self)
    }
    fn dim_out(&self) -> usize {
        Smooth::dim_out(self)
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x)
    }
    fn apply_dual(&self, x: &[Dual64]) -> Vec<Dual64> {
        self.eval(x)
    }
}

/// A validated finite coordinate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("point must have positive dimension".into()));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {i} of point")));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffMode {
    #[default]
    Dual,
    FiniteDifference,
}

/// Finite differences use the central rule with `h = cbrt(eps)·max(1, |x_i|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiffConfig {
    pub mode: DiffMode,
}

impl DiffConfig {
    pub const DUAL: Self = Self { mode: DiffMode::Dual };
    pub const FD: Self = Self { mode: DiffMode::FiniteDifference };
}

pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// `∂map/∂x` at `at`, shaped `dim_out × dim_in`.
pub fn jacobian(map: &dyn Map, at: &[f64], cfg: DiffConfig) -> Result<JacobianMatrix> {
    check_dim(map.dim_in(), at.len())?;
    let (m, n) = (map.dim_out(), map.dim_in());
    let mut jac = DMatrix::zeros(m, n);
    match cfg.mode {
        DiffMode::Dual => {
            let mut xd: Vec<Dual64> = at.iter().map(|&v| Dual64::constant(v)).collect();
            for j in 0..n {
                xd[j].du = 1.0;
                let y = map.apply_dual(&xd);
                check_dim(m, y.len())?;
                for (i, yi) in y.iter().enumerate() {
                    jac[(i, j)] = yi.du;
                }
                xd[j].du = 0.0;
            }
        }
        DiffMode::FiniteDifference => {
            let mut xp = at.to_vec();
            for j in 0..n {
                let h = fd_step(at[j]);
                xp[j] = at[j] + h;
                let hi = map.apply(&xp);
                xp[j] = at[j] - h;
                let lo = map.apply(&xp);
                xp[j] = at[j];
                check_dim(m, hi.len())?;
                for i in 0..m {
                    jac[(i, j)] = (hi[i] - lo[i]) / (2.0 * h);
                }
            }
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Jacobian at {at:?}")));
    }
    Ok(jac)
}

/// Jacobian-vector product `J(x)·v` from a single dual pass.
pub fn jvp(map: &dyn Map, at: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dim(map.dim_in(), at.len())?;
    check_dim(at.len(), v.len())?;
    let xd: Vec<Dual64> = at.iter().zip(v).map(|(&a, &b)| Dual64::new(a, b)).collect();
    Ok(map.apply_dual(&xd).into_iter().map(|y| y.du).collect())
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, 1e-300)`.
pub fn rel_frobenius(a: &JacobianMatrix, b: &JacobianMatrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Identity map on `R^dim`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl Smooth for Identity {
    fn dim_in(&self) -> usize {
        self.0
    }
    fn dim_out(&self) -> usize {
        self.0
    }
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        x.to_vec()
    }
}

/// `x ↦ W x + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl AffineMap {
    pub fn new(w: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        check_dim(w.nrows(), b.len())?;
        Ok(Self { w, b })
    }

    pub fn linear(w: DMatrix<f64>) -> Self {
        let b = vec![0.0; w.nrows()];
        Self { w, b }
    }
}

impl Smooth for AffineMap {
    fn dim_in(&self) -> usize {
        self.w.ncols()
    }
    fn dim_out(&self) -> usize {
        self.w.nrows()
    }
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        (0..self.w.nrows())
            .map(|i| {
                let mut acc = R::cst(self.b[i]);
                for (j, &xj) in x.iter().enumerate() {
                    let wij = self.w[(i, j)];
                    if wij != 0.0 {
                        acc = acc + xj.scale(wij);
                    }
                }
                acc
            })
            .collect()
    }
}

/// Composition `outer ∘ inner`.
pub struct Compose<'a> {
    pub outer: &'a dyn Map,
    pub inner: &'a dyn Map,
}

impl Map for Compose<'_> {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.outer.dim_out()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.outer.apply(&self.inner.apply(x))
    }
    fn apply_dual(&self, x: &[Dual64]) -> Vec<Dual64> {
        self.outer.apply_dual(&self.inner.apply_dual(x))
    }
}
