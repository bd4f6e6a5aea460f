//! Mean-field Gaussian VAE with affine parameter functions.

use serde::{Deserialize, Serialize};

use super::cov::cov_bayes;
use super::kernels::{AffineFn, GaussianKernel};
use crate::error::{check_dim, Result};
use crate::numeric::density::StandardNormal;
use crate::numeric::report::CovReport;

/// Encoder `N(μ_E(x), diag σ_E(x)²)`, decoder `N(μ_D(z), diag σ_D(z)²)`,
/// standard-normal prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub encoder: GaussianKernel,
    pub decoder: GaussianKernel,
}

impl VaeModel {
    pub fn new(enc_mean: AffineFn, enc_std: AffineFn, dec_mean: AffineFn, dec_std: AffineFn) -> Result<Self> {
        let encoder = GaussianKernel::new(enc_mean, enc_std)?;
        let decoder = GaussianKernel::new(dec_mean, dec_std)?;
        check_dim(encoder.mean.dim_out(), decoder.mean.dim_in())?;
        check_dim(encoder.mean.dim_in(), decoder.mean.dim_out())?;
        Ok(Self { encoder, decoder })
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.mean.dim_out()
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.mean.dim_out()
    }

    pub fn prior(&self) -> StandardNormal {
        StandardNormal::new(self.code_dim())
    }
}

/// Bayesian CoV specialized to the VAE.
pub fn cov_vae(model: &VaeModel, x: &[f64], z: &[f64]) -> Result<CovReport> {
    cov_bayes(&model.prior(), &model.decoder, &model.encoder, x, z)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn linear_vae(rho: f64) -> VaeModel {
        let s = (1.0 - rho * rho).sqrt();
        VaeModel::new(
            AffineFn::new(vec![vec![rho, 0.0]], vec![0.0]).unwrap(),
            AffineFn::constant(vec![s], 2),
            AffineFn::new(vec![vec![rho], vec![0.0]], vec![0.0, 0.0]).unwrap(),
            AffineFn::constant(vec![s, 0.5], 1),
        )
        .unwrap()
    }

    #[test]
    fn linear_vae_matches_gaussian() {
        let m = linear_vae(0.6);
        for &z in &[0.0, 0.3, -1.0] {
            assert!((cov_vae(&m, &[0.0, 0.0], &[z]).unwrap().log_density + PI.ln()).abs() < 1e-12);
        }
        // Six encoder standard deviations out.
        let z6 = 6.0 * 0.8;
        assert!((cov_vae(&m, &[0.0, 0.0], &[z6]).unwrap().log_density + PI.ln()).abs() < 1e-8);
    }

    #[test]
    fn narrow_vae_approaches_deterministic_pair() {
        // f(x) = [x1, 2 x2], g(z) = [z1, z2/2].
        let errs: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|&w| {
                let m = VaeModel::new(
                    AffineFn::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0]).unwrap(),
                    AffineFn::constant(vec![w, 2.0 * w], 2),
                    AffineFn::new(vec![vec![1.0, 0.0], vec![0.0, 0.5]], vec![0.0, 0.0]).unwrap(),
                    AffineFn::constant(vec![w, w], 2),
                )
                .unwrap();
                let z = [0.5 * w, -0.7 * w];
                (cov_vae(&m, &[0.0, 0.0], &z).unwrap().log_density + PI.ln()).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[1] < 1e-5, "{errs:?}");
    }

    #[test]
    fn dims_checked() {
        let r = VaeModel::new(
            AffineFn::new(vec![vec![1.0, 0.0]], vec![0.0]).unwrap(),
            AffineFn::constant(vec![1.0], 2),
            AffineFn::new(vec![vec![1.0]], vec![0.0]).unwrap(),
            AffineFn::constant(vec![1.0], 1),
        );
        assert!(r.is_err());
    }
}
