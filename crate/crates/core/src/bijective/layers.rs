//! Invertible layers and their composition.
//!
//! Direction convention: `forward` is the decoder `g: z ↦ x`, `inverse` is
//! the encoder `f: x ↦ z`. Every layer reports the closed-form
//! `log|det J|` of its forward direction, so the bijective change of
//! variables can be assembled as a sum over layers.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analytic::DonutNf;
use crate::error::{check_dim, Error, Result};
use crate::numeric::dual::Real;
use crate::numeric::linalg::{inverse, logdet_lu_signed};
use crate::numeric::map::Smooth;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Dense layer `y = W u + b`, `W` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Dense {
    fn eval<R: Real>(&self, u: &[R]) -> Vec<R> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, &b)| {
                let mut acc = R::cst(b);
                for (w, &v) in row.iter().zip(u) {
                    if *w != 0.0 {
                        acc = acc + v.scale(*w);
                    }
                }
                acc
            })
            .collect()
    }
}

/// Small MLP with `tanh` between dense layers and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioner {
    pub layers: Vec<Dense>,
}

impl Conditioner {
    pub fn eval<R: Real>(&self, u: &[R]) -> Vec<R> {
        let mut h = u.to_vec();
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.eval(&h);
            if i + 1 < n {
                h = h.into_iter().map(|v| v.tanh()).collect();
            }
        }
        h
    }

    fn validate(&self, d_in: usize, d_out: usize) -> Result<()> {
        let mut d = d_in;
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("conditioner needs at least one layer".into()));
        }
        for l in &self.layers {
            check_dim(l.w.len(), l.b.len())?;
            for row in &l.w {
                check_dim(d, row.len())?;
            }
            d = l.b.len();
        }
        check_dim(d_out, d)
    }
}

/// Monotone scalar bijections used coordinate-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarBijection {
    Identity,
    /// `x = scale·z + shift`.
    Affine { scale: f64, shift: f64 },
    /// `x = lo + (hi − lo)·Φ(z)`: standard normal onto `(lo, hi)`.
    NormalCdf { lo: f64, hi: f64 },
    /// `x = (Φ(z)·(r1² − r0²) + r0²)^{1/2}`: standard normal onto the radial
    /// law `2r/(r1² − r0²)`.
    DonutRadius { r0: f64, r1: f64 },
}

impl ScalarBijection {
    fn forward<R: Real>(&self, z: R) -> R {
        match *self {
            Self::Identity => z,
            Self::Affine { scale, shift } => z.scale(scale) + R::cst(shift),
            Self::NormalCdf { lo, hi } => R::cst(lo) + z.norm_cdf().scale(hi - lo),
            Self::DonutRadius { r0, r1 } => (z.norm_cdf().scale(r1 * r1 - r0 * r0) + R::cst(r0 * r0)).sqrt(),
        }
    }

    fn inverse<R: Real>(&self, x: R) -> R {
        match *self {
            Self::Identity => x,
            Self::Affine { scale, shift } => (x - R::cst(shift)).scale(1.0 / scale),
            Self::NormalCdf { lo, hi } => (x - R::cst(lo)).scale(1.0 / (hi - lo)).norm_ppf(),
            Self::DonutRadius { r0, r1 } => (x * x - R::cst(r0 * r0)).scale(1.0 / (r1 * r1 - r0 * r0)).norm_ppf(),
        }
    }

    fn log_deriv(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::Affine { scale, .. } => scale.abs().ln(),
            Self::NormalCdf { lo, hi } => (hi - lo).ln() - 0.5 * z * z - LN_SQRT_2PI,
            Self::DonutRadius { r0, r1 } => {
                let a = r1 * r1 - r0 * r0;
                let x: f64 = self.forward(z);
                (0.5 * a).ln() - 0.5 * z * z - LN_SQRT_2PI - x.ln()
            }
        }
    }

    fn in_range(&self, x: f64) -> bool {
        match *self {
            Self::Identity | Self::Affine { .. } => x.is_finite(),
            Self::NormalCdf { lo, hi } => x > lo && x < hi,
            Self::DonutRadius { r0, r1 } => x > r0 && x < r1,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Identity => true,
            Self::Affine { scale, shift } => scale != 0.0 && scale.is_finite() && shift.is_finite(),
            Self::NormalCdf { lo, hi } => lo < hi,
            Self::DonutRadius { r0, r1 } => 0.0 <= r0 && r0 < r1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid scalar bijection {self:?}")))
        }
    }
}

/// One invertible layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// `x = W z + b`.
    Linear { matrix: Vec<Vec<f64>>, shift: Vec<f64> },
    /// `x = Q z` with `QᵀQ = I` (certified unit determinant).
    Orthogonal { matrix: Vec<Vec<f64>> },
    /// `x = e^{s} ⊙ z + b`.
    ActNorm { log_scale: Vec<f64>, shift: Vec<f64> },
    /// `x_i = z_{perm[i]}`.
    Permutation { perm: Vec<usize> },
    /// Affine coupling: the first `split` coordinates pass through and
    /// condition `x_rest = z_rest ⊙ e^{s(z_head)} + t(z_head)`. The
    /// conditioner outputs `[s, t]`. With `volume_preserving` the log-scales
    /// are centred so that they sum to zero.
    AffineCoupling {
        split: usize,
        conditioner: Conditioner,
        #[serde(default)]
        volume_preserving: bool,
    },
    /// The analytic donut flow (2-D).
    DonutNf { r0: f64, r1: f64 },
    /// Polar-angle rescaling in 2-D: the angle `β ∈ (−π, π]` of `z` becomes
    /// `α = offset + β/factor`, radius unchanged. Maps the plane onto the
    /// sector of width `2π/factor` centred at `offset`.
    AngularRescale { factor: f64, offset: f64 },
    /// Independent scalar bijections per coordinate.
    Elementwise { maps: Vec<ScalarBijection> },
    /// `(α, r) ↦ (r cos α, r sin α)` with `α ∈ (−π, π)`, `r > 0`.
    Polar,
}

fn mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn matvec<R: Real>(m: &DMatrix<f64>, v: &[R]) -> Vec<R> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = R::cst(0.0);
            for (j, &vj) in v.iter().enumerate() {
                let w = m[(i, j)];
                if w != 0.0 {
                    acc = acc + vj.scale(w);
                }
            }
            acc
        })
        .collect()
}

impl Layer {
    /// Planar rotation by `angle` radians.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::Orthogonal { matrix: vec![vec![c, -s], vec![s, c]] }
    }

    pub fn linear(m: &DMatrix<f64>, shift: Vec<f64>) -> Self {
        Self::Linear {
            matrix: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
            shift,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Linear { matrix, shift } => {
                check_dim(dim, matrix.len())?;
                check_dim(dim, shift.len())?;
                for r in matrix {
                    check_dim(dim, r.len())?;
                }
                logdet_lu_signed(&mat(matrix)).map(|_| ())
            }
            Self::Orthogonal { matrix } => {
                check_dim(dim, matrix.len())?;
                for r in matrix {
                    check_dim(dim, r.len())?;
                }
                let q = mat(matrix);
                let dev = (q.transpose() * &q - DMatrix::identity(dim, dim)).abs().max();
                if dev > 1e-10 {
                    return Err(Error::InvalidParameter(format!("matrix is not orthogonal (deviation {dev:e})")));
                }
                Ok(())
            }
            Self::ActNorm { log_scale, shift } => {
                check_dim(dim, log_scale.len())?;
                check_dim(dim, shift.len())
            }
            Self::Permutation { perm } => {
                check_dim(dim, perm.len())?;
                let mut seen = vec![false; dim];
                for &p in perm {
                    if p >= dim || seen[p] {
                        return Err(Error::InvalidParameter(format!("invalid permutation {perm:?}")));
                    }
                    seen[p] = true;
                }
                Ok(())
            }
            Self::AffineCoupling { split, conditioner, .. } => {
                if *split == 0 || *split >= dim {
                    return Err(Error::InvalidParameter(format!("coupling split {split} for dim {dim}")));
                }
                conditioner.validate(*split, 2 * (dim - split))
            }
            Self::DonutNf { r0, r1 } => {
                check_dim(2, dim)?;
                if !(0.0 <= *r0 && r0 < r1) {
                    return Err(Error::InvalidParameter("donut radii".into()));
                }
                Ok(())
            }
            Self::AngularRescale { factor, offset } => {
                check_dim(2, dim)?;
                if !(*factor >= 1.0 && factor.is_finite() && offset.is_finite()) {
                    return Err(Error::InvalidParameter(format!("angular factor {factor} must be >= 1")));
                }
                Ok(())
            }
            Self::Elementwise { maps } => {
                check_dim(dim, maps.len())?;
                maps.iter().try_for_each(|m| m.validate())
            }
            Self::Polar => check_dim(2, dim),
        }
    }

    /// Whether the layer's determinant is identically one.
    pub fn unit_determinant(&self) -> bool {
        matches!(
            self,
            Self::Orthogonal { .. } | Self::Permutation { .. } | Self::AffineCoupling { volume_preserving: true, .. }
        )
    }

    fn coupling_scales<R: Real>(split: usize, conditioner: &Conditioner, vp: bool, head: &[R], dim: usize) -> (Vec<R>, Vec<R>) {
        let m = dim - split;
        let h = conditioner.eval(head);
        let mut s: Vec<R> = h[..m].to_vec();
        let t: Vec<R> = h[m..].to_vec();
        if vp {
            let mut mean = R::cst(0.0);
            for v in &s {
                mean = mean + *v;
            }
            mean = mean.scale(1.0 / m as f64);
            s = s.into_iter().map(|v| v - mean).collect();
        }
        (s, t)
    }

    pub fn forward<R: Real>(&self, z: &[R]) -> Vec<R> {
        match self {
            Self::Linear { matrix, shift } => {
                let y = matvec(&mat(matrix), z);
                y.into_iter().zip(shift).map(|(v, &b)| v + R::cst(b)).collect()
            }
            Self::Orthogonal { matrix } => matvec(&mat(matrix), z),
            Self::ActNorm { log_scale, shift } => z
                .iter()
                .zip(log_scale.iter().zip(shift))
                .map(|(&v, (&s, &b))| v.scale(s.exp()) + R::cst(b))
                .collect(),
            Self::Permutation { perm } => perm.iter().map(|&p| z[p]).collect(),
            Self::AffineCoupling { split, conditioner, volume_preserving } => {
                let (s, t) = Self::coupling_scales(*split, conditioner, *volume_preserving, &z[..*split], z.len());
                let mut x = z[..*split].to_vec();
                for (i, &zi) in z[*split..].iter().enumerate() {
                    x.push(zi * s[i].exp() + t[i]);
                }
                x
            }
            Self::DonutNf { r0, r1 } => DonutNf { r0: *r0, r1: *r1 }.eval(z),
            Self::AngularRescale { factor, offset } => {
                let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
                let a = z[1].atan2(z[0]).scale(1.0 / factor) + R::cst(*offset);
                vec![r * a.cos(), r * a.sin()]
            }
            Self::Elementwise { maps } => z.iter().zip(maps).map(|(&v, m)| m.forward(v)).collect(),
            Self::Polar => vec![z[1] * z[0].cos(), z[1] * z[0].sin()],
        }
    }

    pub fn inverse<R: Real>(&self, x: &[R]) -> Vec<R> {
        match self {
            Self::Linear { matrix, shift } => {
                let inv = inverse(&mat(matrix)).unwrap_or_else(|_| DMatrix::from_element(x.len(), x.len(), f64::NAN));
                let centred: Vec<R> = x.iter().zip(shift).map(|(&v, &b)| v - R::cst(b)).collect();
                matvec(&inv, &centred)
            }
            Self::Orthogonal { matrix } => matvec(&mat(matrix).transpose(), x),
            Self::ActNorm { log_scale, shift } => x
                .iter()
                .zip(log_scale.iter().zip(shift))
                .map(|(&v, (&s, &b))| (v - R::cst(b)).scale((-s).exp()))
                .collect(),
            Self::Permutation { perm } => {
                let mut z = x.to_vec();
                for (i, &p) in perm.iter().enumerate() {
                    z[p] = x[i];
                }
                z
            }
            Self::AffineCoupling { split, conditioner, volume_preserving } => {
                let (s, t) = Self::coupling_scales(*split, conditioner, *volume_preserving, &x[..*split], x.len());
                let mut z = x[..*split].to_vec();
                for (i, &xi) in x[*split..].iter().enumerate() {
                    z.push((xi - t[i]) * (-s[i]).exp());
                }
                z
            }
            Self::DonutNf { r0, r1 } => DonutNf { r0: *r0, r1: *r1 }.inverse_generic(x),
            Self::AngularRescale { factor, offset } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let raw = x[1].atan2(x[0]);
                let rel = raw - R::cst(*offset);
                let shift = rel.value() - circular(rel.value());
                let b = (rel - R::cst(shift)).scale(*factor);
                vec![r * b.cos(), r * b.sin()]
            }
            Self::Elementwise { maps } => x.iter().zip(maps).map(|(&v, m)| m.inverse(v)).collect(),
            Self::Polar => vec![x[1].atan2(x[0]), (x[0] * x[0] + x[1] * x[1]).sqrt()],
        }
    }

    /// Closed-form `log|det ∂forward/∂z|` at `z`.
    pub fn log_det_forward(&self, z: &[f64]) -> f64 {
        match self {
            Self::Linear { matrix, .. } => logdet_lu_signed(&mat(matrix)).map_or(f64::NAN, |(l, _)| l),
            Self::Orthogonal { .. } | Self::Permutation { .. } => 0.0,
            Self::ActNorm { log_scale, .. } => log_scale.iter().sum(),
            Self::AffineCoupling { split, conditioner, volume_preserving } => {
                if *volume_preserving {
                    return 0.0;
                }
                let (s, _) = Self::coupling_scales(*split, conditioner, false, &z[..*split], z.len());
                s.iter().sum()
            }
            Self::DonutNf { r0, r1 } => DonutNf { r0: *r0, r1: *r1 }.logdet(z),
            Self::AngularRescale { factor, .. } => -factor.ln(),
            Self::Elementwise { maps } => z.iter().zip(maps).map(|(&v, m)| m.log_deriv(v)).sum(),
            Self::Polar => z[1].abs().ln(),
        }
    }

    /// Whether `x` is in the image of `forward`, i.e. `inverse` is defined.
    pub fn in_range(&self, x: &[f64]) -> bool {
        match self {
            Self::DonutNf { r0, r1 } => DonutNf { r0: *r0, r1: *r1 }.in_range(x),
            Self::AngularRescale { factor, offset } => {
                let rel = circular(x[1].atan2(x[0]) - offset);
                (x[0] != 0.0 || x[1] != 0.0) && rel.abs() < PI / factor
            }
            Self::Elementwise { maps } => x.iter().zip(maps).all(|(&v, m)| m.in_range(v)),
            Self::Polar => x[0] != 0.0 || x[1] != 0.0,
            _ => true,
        }
    }
}

/// Wrap into `(−π, π]`.
fn circular(a: f64) -> f64 {
    let d = a.rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// A finite composition of invertible layers, applied in order from code
/// to data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMap {
    pub dim: usize,
    pub layers: Vec<Layer>,
}

impl FlowMap {
    pub fn new(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("flow dimension must be positive".into()));
        }
        for l in &layers {
            l.validate(dim)?;
        }
        Ok(Self { dim, layers })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, layers: Vec::new() }
    }

    /// Re-run validation, e.g. after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.dim, self.layers)
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        self.forward_generic(z)
    }

    pub fn forward_generic<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.layers.iter().fold(z.to_vec(), |h, l| l.forward(&h))
    }

    pub fn inverse_generic<R: Real>(&self, x: &[R]) -> Vec<R> {
        self.layers.iter().rev().fold(x.to_vec(), |h, l| l.inverse(&h))
    }

    /// `(x, Σ_l log|det J_{g_l}|)`.
    pub fn forward_with_logdet(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim, z.len())?;
        let mut h = z.to_vec();
        let mut ld = 0.0;
        for l in &self.layers {
            ld += l.log_det_forward(&h);
            h = l.forward(&h);
        }
        Ok((h, ld))
    }

    /// `Some((f(x), log|det J_f(x)|))`, or `None` when `x` is outside the
    /// image of the decoder.
    pub fn inverse_with_logdet(&self, x: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
        check_dim(self.dim, x.len())?;
        let mut h = x.to_vec();
        let mut ld = 0.0;
        for l in self.layers.iter().rev() {
            if !l.in_range(&h) {
                return Ok(None);
            }
            h = l.inverse(&h);
            ld -= l.log_det_forward(&h);
        }
        Ok(Some((h, ld)))
    }

    pub fn inverse(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inverse_with_logdet(x).ok().flatten().map(|(z, _)| z)
    }

    pub fn in_range(&self, x: &[f64]) -> bool {
        let mut h = x.to_vec();
        for l in self.layers.iter().rev() {
            if !l.in_range(&h) {
                return false;
            }
            h = l.inverse(&h);
        }
        true
    }

    /// The encoder `f = g⁻¹` as a differentiable map.
    pub fn encoder(&self) -> Encoder<'_> {
        Encoder(self)
    }
}

impl Smooth for FlowMap {
    fn dim_in(&self) -> usize {
        self.dim
    }
    fn dim_out(&self) -> usize {
        self.dim
    }
    fn eval<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.forward_generic(z)
    }
}

/// Inverse direction of a [`FlowMap`].
pub struct Encoder<'a>(pub &'a FlowMap);

impl Smooth for Encoder<'_> {
    fn dim_in(&self) -> usize {
        self.0.dim
    }
    fn dim_out(&self) -> usize {
        self.0.dim
    }
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        self.0.inverse_generic(x)
    }
}

/// Deterministic pseudo-random coupling stack for tests and benchmarks:
/// `n_layers` affine couplings with one hidden `tanh` layer, interleaved with
/// reversing permutations.
pub fn random_coupling_stack(dim: usize, n_layers: usize, seed: u64) -> Result<FlowMap> {
    use rand::Rng;
    let mut rng = crate::numeric::rng::seeded(seed);
    let mut layers = Vec::new();
    let hidden = 8;
    for _ in 0..n_layers {
        let split = dim / 2;
        let m = dim - split;
        let mut dense = |rows: usize, cols: usize, scale: f64| Dense {
            w: (0..rows).map(|_| (0..cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).collect(),
            b: (0..rows).map(|_| 0.1 * rng.random_range(-1.0..1.0)).collect(),
        };
        let l1 = dense(hidden, split, 0.8);
        let l2 = dense(2 * m, hidden, 0.3);
        layers.push(Layer::AffineCoupling {
            split,
            conditioner: Conditioner { layers: vec![l1, l2] },
            volume_preserving: false,
        });
        layers.push(Layer::Permutation { perm: (0..dim).rev().collect() });
    }
    FlowMap::new(dim, layers)
}
