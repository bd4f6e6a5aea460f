//! Narrow Gaussian kernels around a bijective pair, for deterministic-limit
//! checks of the stochastic formulas.

use nalgebra::{DMatrix, DVector};

use super::kernels::ConditionalKernel;
use crate::bijective::FlowMap;
use crate::numeric::density::LN_2PI;
use crate::numeric::linalg::{inverse, logdet_lu};
use crate::numeric::map::{jacobian, DiffConfig};
use crate::numeric::rng::{std_normal, StreamRng};

/// Decoder `N(g(z), w² I)`.
pub struct NarrowDecoder<'a> {
    pub flow: &'a FlowMap,
    pub width: f64,
}

impl ConditionalKernel for NarrowDecoder<'_> {
    fn target_dim(&self) -> usize {
        self.flow.dim
    }
    fn cond_dim(&self) -> usize {
        self.flow.dim
    }
    fn log_density(&self, x: &[f64], z: &[f64]) -> f64 {
        let m = self.flow.forward(z);
        let d = x.len() as f64;
        let q: f64 = x.iter().zip(&m).map(|(a, b)| ((a - b) / self.width).powi(2)).sum();
        -0.5 * q - d * self.width.ln() - 0.5 * d * LN_2PI
    }
    fn sample(&self, z: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self.flow.forward(z).into_iter().map(|m| m + self.width * std_normal(rng)).collect()
    }
}

/// Encoder `N(f(x), w² (J_gᵀ J_g)⁻¹)` with `J_g` taken at `f(x)`: the
/// Laplace approximation of the posterior under [`NarrowDecoder`].
pub struct NarrowEncoder<'a> {
    pub flow: &'a FlowMap,
    pub width: f64,
}

impl NarrowEncoder<'_> {
    fn center(&self, x: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let z = self.flow.inverse(x)?;
        let j = jacobian(self.flow, &z, DiffConfig::DUAL).ok()?;
        Some((z, j))
    }
}

impl ConditionalKernel for NarrowEncoder<'_> {
    fn target_dim(&self) -> usize {
        self.flow.dim
    }
    fn cond_dim(&self) -> usize {
        self.flow.dim
    }
    fn log_density(&self, z: &[f64], x: &[f64]) -> f64 {
        let Some((m, j)) = self.center(x) else {
            return f64::NEG_INFINITY;
        };
        let Ok(ld) = logdet_lu(&j) else {
            return f64::NAN;
        };
        let d = z.len() as f64;
        let u = DVector::from_iterator(z.len(), z.iter().zip(&m).map(|(a, b)| a - b));
        let ju = &j * u;
        -0.5 * ju.norm_squared() / (self.width * self.width) - d * self.width.ln() + ld - 0.5 * d * LN_2PI
    }
    fn sample(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let Some((m, j)) = self.center(x) else {
            return vec![f64::NAN; self.flow.dim];
        };
        let Ok(ji) = inverse(&j) else {
            return vec![f64::NAN; self.flow.dim];
        };
        let e = DVector::from_iterator(m.len(), (0..m.len()).map(|_| self.width * std_normal(rng)));
        let dz = ji * e;
        m.iter().zip(dz.iter()).map(|(a, b)| a + b).collect()
    }
}
