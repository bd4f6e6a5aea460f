//! Per-dimension decompositions of the bijective CoV: code trees with
//! pointwise mutual information, and disentangled flows with orthogonal
//! Jacobian rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bijective::FlowMap;
use crate::error::{check_dim, Error, Result};
use crate::numeric::density::Density;
use crate::numeric::linalg::half_logdet_gram;
use crate::numeric::map::{jacobian, DiffConfig, Map};
use crate::numeric::report::CovReport;
use crate::numeric::rng::{std_normal, StreamRng};

/// Largest admissible `max|offdiag(J Jᵀ)| / max diag(J Jᵀ)`.
pub const ORTHOGONAL_ROWS_TOL: f64 = 1e-8;

/// Binary tree over code dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CodeTree {
    Leaf(usize),
    Node(Box<CodeTree>, Box<CodeTree>),
}

impl CodeTree {
    pub fn node(a: CodeTree, b: CodeTree) -> Self {
        Self::Node(Box::new(a), Box::new(b))
    }

    /// `((0, 1), 2), ...`: leaves merged left to right.
    pub fn chain(dim: usize) -> Self {
        (1..dim).fold(Self::Leaf(0), |t, j| Self::node(t, Self::Leaf(j)))
    }

    /// Dimensions under this node, sorted.
    pub fn dims(&self) -> Vec<usize> {
        let mut v = Vec::new();
        self.collect(&mut v);
        v.sort_unstable();
        v
    }

    fn collect(&self, out: &mut Vec<usize>) {
        match self {
            Self::Leaf(j) => out.push(*j),
            Self::Node(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    /// Leaves must be exactly `0..dim`, each once.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut v = Vec::new();
        self.collect(&mut v);
        let n = v.len();
        v.sort_unstable();
        v.dedup();
        if v.len() != n || v != (0..dim).collect::<Vec<_>>() {
            return Err(Error::InvalidParameter(format!("tree leaves {v:?} do not partition 0..{dim}")));
        }
        Ok(())
    }

    fn interior<'a>(&'a self, out: &mut Vec<&'a CodeTree>) {
        if let Self::Node(a, b) = self {
            out.push(self);
            a.interior(out);
            b.interior(out);
        }
    }
}

fn marginal(prior: &dyn Density, z: &[f64], dims: &[usize]) -> Result<f64> {
    dims.iter()
        .map(|&j| {
            prior
                .log_density_1d(j, z[j])
                .ok_or_else(|| Error::InvalidParameter("decomposition needs a prior that factorizes over dims".into()))
        })
        .sum()
}

/// Manifold density of the node's code subset: its prior marginal minus
/// `½ log det(J_Sᵀ J_S)` with `J_S` the decoder columns of the subset.
fn node_log_density(dims: &[usize], z: &[f64], jg: &DMatrix<f64>, prior: &dyn Density) -> Result<f64> {
    let cols = DMatrix::from_columns(&dims.iter().map(|&j| jg.column(j)).collect::<Vec<_>>());
    Ok(marginal(prior, z, dims)? - half_logdet_gram(&cols)?)
}

/// `I(z_a; z_b) = log p(x_k) − log p(x_a) − log p(x_b)` for node `k` with
/// children `a`, `b`; zero for a leaf. `jg` is the decoder Jacobian at `z`.
pub fn pointwise_mi(node: &CodeTree, z: &[f64], jg: &DMatrix<f64>, prior: &dyn Density) -> Result<f64> {
    match node {
        CodeTree::Leaf(_) => Ok(0.0),
        CodeTree::Node(a, b) => Ok(node_log_density(&node.dims(), z, jg, prior)?
            - node_log_density(&a.dims(), z, jg, prior)?
            - node_log_density(&b.dims(), z, jg, prior)?),
    }
}

/// `Σ_j [log p(Z_j=z_j) − log‖J_g(z)_{:,j}‖] + Σ_k I_k`, equal to the
/// bijective CoV for every tree. The prior must factorize over dimensions.
pub fn cov_hierarchical(tree: &CodeTree, flow: &FlowMap, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(flow.dim, x.len())?;
    check_dim(flow.dim, prior.dim())?;
    tree.validate(flow.dim)?;
    let Some(z) = flow.inverse(x) else {
        return Ok(CovReport::outside("x outside the flow image"));
    };
    let jg = jacobian(flow, &z, DiffConfig::DUAL)?;
    let mut terms: Vec<(String, f64)> = Vec::new();
    for j in 0..flow.dim {
        let n = jg.column(j).norm();
        if !(n > 0.0) {
            return Err(Error::RankDeficient { pivot: n, threshold: 0.0 });
        }
        terms.push((format!("log p(Z_{j}) - log‖J_g col {j}‖"), marginal(prior, &z, &[j])? - n.ln()));
    }
    let mut nodes = Vec::new();
    tree.interior(&mut nodes);
    for node in nodes {
        terms.push((format!("I{:?}", node.dims()), pointwise_mi(node, &z, &jg, prior)?));
    }
    Ok(CovReport::from_terms(terms))
}

/// `max|offdiag(J_f J_fᵀ)| / max diag(J_f J_fᵀ)` at `x`.
pub fn check_orthogonal_rows(encoder: &dyn Map, x: &[f64]) -> Result<f64> {
    let j = jacobian(encoder, x, DiffConfig::DUAL)?;
    let g = &j * j.transpose();
    let n = g.nrows();
    let diag = (0..n).map(|i| g[(i, i)].abs()).fold(0.0, f64::max);
    let mut off: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                off = off.max(g[(r, c)].abs());
            }
        }
    }
    Ok(off / diag.max(f64::MIN_POSITIVE))
}

/// Disentangled CoV `Σ_{j<C}[log p(Z_j=f_j(x)) + log‖J_f(x)_j‖] + Σ_{j≥C}[…]`,
/// valid when the encoder Jacobian has orthogonal rows.
pub fn cov_disentangled(encoder: &dyn Map, prior: &dyn Density, core_dim: usize, x: &[f64]) -> Result<CovReport> {
    check_dim(encoder.dim_in(), x.len())?;
    check_dim(encoder.dim_out(), x.len())?;
    check_dim(prior.dim(), x.len())?;
    if core_dim > x.len() {
        return Err(Error::InvalidParameter(format!("core dim {core_dim} exceeds {}", x.len())));
    }
    let ratio = check_orthogonal_rows(encoder, x)?;
    if !(ratio <= ORTHOGONAL_ROWS_TOL) {
        return Err(Error::OrthogonalRows { ratio });
    }
    let z = encoder.apply(x);
    let j = jacobian(encoder, x, DiffConfig::DUAL)?;
    let contrib = |dims: std::ops::Range<usize>| -> Result<f64> {
        dims.map(|k| Ok(marginal(prior, &z, &[k])? + j.row(k).norm().ln())).sum()
    };
    Ok(CovReport::from_terms([("core dims", contrib(0..core_dim)?), ("detail dims", contrib(core_dim..x.len())?)]))
}

/// Row-norm statistics of one code dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimScore {
    pub dim: usize,
    /// `E‖J_f(x)_j‖` over the samples.
    pub mean_row_norm: f64,
    /// `|E‖J_f(x + σε)_j‖ / E‖J_f(x)_j‖ − 1|` for each noise level.
    pub instability: Vec<f64>,
}

/// Noise levels of the row-norm stability check.
pub const STABILITY_SIGMAS: [f64; 2] = [0.01, 0.1];

/// Ranks code dimensions by ascending mean encoder row norm: small rows are
/// the dimensions along which the decoder moves `x` the most.
pub fn rank_core_dims(encoder: &dyn Map, samples: &[Vec<f64>], rng: &mut StreamRng) -> Result<Vec<DimScore>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let d = encoder.dim_out();
    let mean_norms = |noise: f64, rng: &mut StreamRng| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; d];
        for x in samples {
            let xn: Vec<f64> = x.iter().map(|v| v + noise * std_normal(rng)).collect();
            let j = jacobian(encoder, &xn, DiffConfig::DUAL)?;
            for (k, a) in acc.iter_mut().enumerate() {
                *a += j.row(k).norm();
            }
        }
        Ok(acc.into_iter().map(|a| a / samples.len() as f64).collect())
    };
    let base = mean_norms(0.0, rng)?;
    let noisy: Vec<Vec<f64>> = STABILITY_SIGMAS.iter().map(|&s| mean_norms(s, rng)).collect::<Result<_>>()?;
    let mut out: Vec<DimScore> = (0..d)
        .map(|k| DimScore {
            dim: k,
            mean_row_norm: base[k],
            instability: noisy.iter().map(|n| (n[k] / base[k] - 1.0).abs()).collect(),
        })
        .collect();
    out.sort_by(|a, b| a.mean_row_norm.total_cmp(&b.mean_row_norm).then(a.dim.cmp(&b.dim)));
    Ok(out)
}

/// Dimensions with mean row norm at most `eps` and instability at most
/// `max_instability` at every noise level.
pub fn core_dims(scores: &[DimScore], eps: f64, max_instability: f64) -> Vec<usize> {
    scores
        .iter()
        .filter(|s| s.mean_row_norm <= eps && s.instability.iter().all(|v| *v <= max_instability))
        .map(|s| s.dim)
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;

    use super::*;
    use crate::analytic::DonutTarget;
    use crate::bijective::{cov_bijective, cov_bijective_map, random_coupling_stack, Layer};
    use crate::numeric::density::{StandardNormal, UniformBox};
    use crate::numeric::dual::Real;
    use crate::numeric::map::{AffineMap, Smooth};
    use crate::numeric::rng::seeded;
    use proptest::prelude::*;

    fn lin(rows: &[f64], d: usize) -> FlowMap {
        FlowMap::new(d, vec![Layer::linear(&DMatrix::from_row_slice(d, d, rows), vec![0.0; d])]).unwrap()
    }

    #[test]
    fn diagonal_flow_has_no_interactions() {
        let f = lin(&[2.0, 0.0, 0.0, 0.5], 2);
        let r = cov_hierarchical(&CodeTree::chain(2), &f, &StandardNormal::new(2), &[0.3, -1.2]).unwrap();
        assert!(r.terms[2].value.abs() < 1e-14);
    }

    #[test]
    fn shear_matches_bijective() {
        let f = lin(&[1.0, 0.0, 1.0, 1.0], 2);
        let p = StandardNormal::new(2);
        let mut rng = seeded(15);
        for _ in 0..20 {
            let x = [2.0 * std_normal(&mut rng), 2.0 * std_normal(&mut rng)];
            let a = cov_hierarchical(&CodeTree::chain(2), &f, &p, &x).unwrap();
            let b = cov_bijective(&f, &p, &x).unwrap();
            assert!((a.log_density - b.log_density).abs() < 1e-8);
            assert!(a.terms[2].value.abs() > 1e-3);
        }
    }

    #[test]
    fn tree_shape_invariance() {
        let f = random_coupling_stack(3, 3, 16).unwrap();
        let p = StandardNormal::new(3);
        let trees = [
            CodeTree::chain(3),
            CodeTree::node(CodeTree::Leaf(0), CodeTree::node(CodeTree::Leaf(1), CodeTree::Leaf(2))),
            CodeTree::node(CodeTree::node(CodeTree::Leaf(2), CodeTree::Leaf(0)), CodeTree::Leaf(1)),
        ];
        let mut rng = seeded(17);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| std_normal(&mut rng)).collect();
            let b = cov_bijective(&f, &p, &x).unwrap().log_density;
            for t in &trees {
                assert!((cov_hierarchical(t, &f, &p, &x).unwrap().log_density - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn bad_trees_rejected() {
        let t = CodeTree::node(CodeTree::Leaf(0), CodeTree::Leaf(0));
        assert!(t.validate(2).is_err());
        assert!(CodeTree::chain(2).validate(3).is_err());
        let s = serde_json::to_string(&CodeTree::chain(3)).unwrap();
        assert_eq!(s, "[[0,1],2]");
        assert_eq!(serde_json::from_str::<CodeTree>(&s).unwrap(), CodeTree::chain(3));
    }

    #[test]
    fn disentangled_diagonal_and_rotation() {
        let p = StandardNormal::new(2);
        let diag = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        let x = [0.4, 0.1];
        let r = cov_disentangled(&diag, &p, 1, &x).unwrap();
        assert!((r.log_density - cov_bijective_map(&diag, &p, &x).unwrap().log_density).abs() < 1e-12);
        let (s, c) = 0.6f64.sin_cos();
        let rot = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]));
        let r = cov_disentangled(&rot, &p, 1, &x).unwrap();
        assert!((r.log_density - p.log_density(&rot.eval(&x))).abs() < 1e-12);
        let shear = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        assert!(matches!(cov_disentangled(&shear, &p, 1, &x), Err(Error::OrthogonalRows { .. })));
    }

    /// `x ↦ (arg x, (‖x‖² − r0²)/A)`: rows `∇θ ⟂ ∇r`.
    struct PolarCdf(DonutTarget);
    impl Smooth for PolarCdf {
        fn dim_in(&self) -> usize {
            2
        }
        fn dim_out(&self) -> usize {
            2
        }
        fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
            let a = x[1].atan2(x[0]);
            let a = if a.value() < 0.0 { a + R::cst(TAU) } else { a };
            let r2 = x[0] * x[0] + x[1] * x[1];
            vec![a, (r2 - R::cst(self.0.r0 * self.0.r0)).scale(1.0 / self.0.a())]
        }
    }

    #[test]
    fn polar_donut_encoder() {
        let t = DonutTarget::default();
        let enc = PolarCdf(t);
        let p = UniformBox::new(vec![0.0, 0.0], vec![TAU, 1.0]).unwrap();
        let mut rng = seeded(18);
        for _ in 0..20 {
            let x = crate::analytic::donut_split_sample(&t, &mut rng);
            assert!(check_orthogonal_rows(&enc, &x).unwrap() < 1e-12);
            let a = cov_disentangled(&enc, &p, 1, &x).unwrap().log_density;
            let b = cov_bijective_map(&enc, &p, &x).unwrap().log_density;
            assert!((a - b).abs() < 1e-8);
            assert!((a + (55.0 * std::f64::consts::PI).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn core_ranking() {
        // Dimension 1 carries the large-scale variation: its encoder row is small.
        let enc = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]));
        let samples: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.1, 1.0]).collect();
        let s = rank_core_dims(&enc, &samples, &mut seeded(3)).unwrap();
        assert_eq!(s[0].dim, 1);
        assert!(s[0].instability.iter().all(|v| *v < 1e-12));
        assert_eq!(core_dims(&s, 1.0, 0.05), vec![1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn hierarchical_equals_bijective(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let f = random_coupling_stack(2, 2, seed).unwrap();
            let p = StandardNormal::new(2);
            let h = cov_hierarchical(&CodeTree::chain(2), &f, &p, &[a, b]).unwrap().log_density;
            let c = cov_bijective(&f, &p, &[a, b]).unwrap().log_density;
            prop_assert!((h - c).abs() < 1e-8);
        }
    }
}
