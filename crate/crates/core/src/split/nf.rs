//! Split normalizing flows: a bijection into core and detail codes, each
//! with its own flow to a noise prior.

use crate::error::{check_dim, Error, Result};
use crate::numeric::density::Density;
use crate::numeric::linalg::logdet_lu;
use crate::numeric::map::{jacobian, DiffConfig, Map};
use crate::numeric::report::CovReport;

/// `φ̂: x ↦ (z_c, z_d)` with the first `core_dim` outputs as core code,
/// `ψ_c: z_c ↦ s_c`, and `ψ_d: (z_d, z_c) ↦ s_d` conditioned on the core.
pub struct SplitNf {
    pub phi: Box<dyn Map>,
    /// `φ̂⁻¹`, for decoding.
    pub phi_inverse: Box<dyn Map>,
    pub core_dim: usize,
    pub psi_c: Box<dyn Map>,
    /// Input is `(z_d, z_c)`, output `s_d`.
    pub psi_d: Box<dyn Map>,
    pub prior_c: Box<dyn Density>,
    pub prior_d: Box<dyn Density>,
}

impl SplitNf {
    pub fn new(
        phi: Box<dyn Map>,
        phi_inverse: Box<dyn Map>,
        core_dim: usize,
        psi_c: Box<dyn Map>,
        psi_d: Box<dyn Map>,
        prior_c: Box<dyn Density>,
        prior_d: Box<dyn Density>,
    ) -> Result<Self> {
        let d = phi.dim_in();
        if core_dim == 0 || core_dim >= d {
            return Err(Error::InvalidParameter(format!("core dim {core_dim} must lie in 1..{d}")));
        }
        check_dim(d, phi.dim_out())?;
        check_dim(d, phi_inverse.dim_in())?;
        check_dim(d, phi_inverse.dim_out())?;
        check_dim(core_dim, psi_c.dim_in())?;
        check_dim(core_dim, psi_c.dim_out())?;
        check_dim(d, psi_d.dim_in())?;
        check_dim(d - core_dim, psi_d.dim_out())?;
        check_dim(core_dim, prior_c.dim())?;
        check_dim(d - core_dim, prior_d.dim())?;
        Ok(Self { phi, phi_inverse, core_dim, psi_c, psi_d, prior_c, prior_d })
    }

    pub fn dim(&self) -> usize {
        self.phi.dim_in()
    }

    /// `(z_c, z_d) = φ̂(x)`.
    pub fn encode(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut z = self.phi.apply(x);
        let zd = z.split_off(self.core_dim);
        (z, zd)
    }

    /// `φ̂⁻¹(z_c, z_d)`; with `z_d = 0` this is the point on the core manifold.
    pub fn decode(&self, zc: &[f64], zd: &[f64]) -> Vec<f64> {
        let mut z = zc.to_vec();
        z.extend_from_slice(zd);
        self.phi_inverse.apply(&z)
    }

    pub fn decode_core(&self, zc: &[f64]) -> Vec<f64> {
        self.decode(zc, &vec![0.0; self.dim() - self.core_dim])
    }
}

/// Sum of five terms: `log|det J_φ̂(x)|`, `log p(S_c=ψ_c(z_c))`,
/// `log|det J_ψc(z_c)|`, `log p(S_d=ψ_d(z_d; z_c))`, `log|det ∂ψ_d/∂z_d|`.
pub fn cov_split_nf(model: &SplitNf, x: &[f64]) -> Result<CovReport> {
    check_dim(model.dim(), x.len())?;
    let c = model.core_dim;
    let ld_phi = logdet_lu(&jacobian(model.phi.as_ref(), x, DiffConfig::DUAL)?)?;
    let (zc, zd) = model.encode(x);
    let sc = model.psi_c.apply(&zc);
    let ld_c = logdet_lu(&jacobian(model.psi_c.as_ref(), &zc, DiffConfig::DUAL)?)?;
    let mut dc = zd.clone();
    dc.extend_from_slice(&zc);
    let sd = model.psi_d.apply(&dc);
    let jd = jacobian(model.psi_d.as_ref(), &dc, DiffConfig::DUAL)?;
    let ld_d = logdet_lu(&jd.columns(0, model.dim() - c).into_owned())?;
    Ok(CovReport::from_terms([
        ("log|det J_φ̂(x)|", ld_phi),
        ("log p(S_c=ψ_c(z_c))", model.prior_c.log_density(&sc)),
        ("log|det J_ψc|", ld_c),
        ("log p(S_d=ψ_d(z_d,z_c))", model.prior_d.log_density(&sd)),
        ("log|det J_ψd|", ld_d),
    ]))
}
