//! Triangular (Knothe-Rosenblatt) maps with affine conditioners.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::dual::Real;
use crate::numeric::map::Smooth;

/// Coordinate `j`: `x_j = s_j(x_{<j})·z_j + t_j(x_{<j})` with
/// `s_j(u) = scale_const + scale_coef·u` and `t_j(u) = shift_const + shift_coef·u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularCoord {
    pub scale_const: f64,
    #[serde(default)]
    pub scale_coef: Vec<f64>,
    #[serde(default)]
    pub shift_const: f64,
    #[serde(default)]
    pub shift_coef: Vec<f64>,
}

impl TriangularCoord {
    pub fn affine(scale: f64, shift_coef: Vec<f64>) -> Self {
        Self { scale_const: scale, scale_coef: Vec::new(), shift_const: 0.0, shift_coef }
    }

    fn lin<R: Real>(c: f64, coef: &[f64], prev: &[R]) -> R {
        let mut acc = R::cst(c);
        for (&a, &u) in coef.iter().zip(prev) {
            acc = acc + u.scale(a);
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularMap {
    pub coords: Vec<TriangularCoord>,
}

impl TriangularMap {
    pub fn new(coords: Vec<TriangularCoord>) -> Result<Self> {
        for (j, c) in coords.iter().enumerate() {
            if c.scale_coef.len() > j || c.shift_coef.len() > j {
                return Err(Error::InvalidParameter(format!("coordinate {j} depends on later coordinates")));
            }
        }
        Ok(Self { coords })
    }

    pub fn identity(dim: usize) -> Self {
        Self { coords: (0..dim).map(|_| TriangularCoord::affine(1.0, Vec::new())).collect() }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn run<R: Real>(&self, z: &[R]) -> (Vec<R>, Vec<R>) {
        let mut x: Vec<R> = Vec::with_capacity(z.len());
        let mut diag = Vec::with_capacity(z.len());
        for (j, c) in self.coords.iter().enumerate() {
            let s = TriangularCoord::lin(c.scale_const, &c.scale_coef, &x);
            let t = TriangularCoord::lin(c.shift_const, &c.shift_coef, &x);
            x.push(s * z[j] + t);
            diag.push(s);
        }
        (x, diag)
    }

    /// Sequential inverse `z_j = (x_j − t_j)/s_j`.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut z = Vec::with_capacity(x.len());
        for (j, c) in self.coords.iter().enumerate() {
            let s: f64 = TriangularCoord::lin(c.scale_const, &c.scale_coef, &x[..j]);
            let t: f64 = TriangularCoord::lin(c.shift_const, &c.shift_coef, &x[..j]);
            if !(s > 0.0) {
                return Err(Error::NonMonotone { coord: j, derivative: s });
            }
            z.push((x[j] - t) / s);
        }
        Ok(z)
    }
}

impl Smooth for TriangularMap {
    fn dim_in(&self) -> usize {
        self.dim()
    }
    fn dim_out(&self) -> usize {
        self.dim()
    }
    fn eval<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.run(z).0
    }
}

/// `(x, Σ_j log ∂g_j/∂z_j)` by sequential evaluation.
pub fn knothe_rosenblatt_apply(map: &TriangularMap, z: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dim(map.dim(), z.len())?;
    let (x, diag) = map.run(z);
    let mut ld = 0.0;
    for (j, &d) in diag.iter().enumerate() {
        if !(d > 0.0) {
            return Err(Error::NonMonotone { coord: j, derivative: d });
        }
        ld += d.ln();
    }
    Ok((x, ld))
}
