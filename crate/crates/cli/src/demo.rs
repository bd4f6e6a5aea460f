//! Four-way demos: bijective, injective, split and stochastic models of
//! one target, with density checks, consistency checks, trade-off metrics
//! and plot data.

use std::path::Path;

use clap::ValueEnum;
use covkit::analytic::{gaussian_bijective_pair, gaussian_injective_pair, AnisotropicGaussian, DonutModels, GaussianStochastic};
use covkit::bijective::{FlowMap, Layer};
use covkit::diagnostics::{
    tradeoff_metrics, DeterministicPair, Distance, Divergence, DonutFiberResample, GaussianFiberResample, Reconstructor,
    StochasticPair, TradeoffMetrics,
};
use covkit::injective::{ArgEncoder, CircleDecoder};
use covkit::model::{CheckBox, CheckReport, ModelSpec};
use covkit::numeric::rng::RngStream;
use covkit::numeric::{CovReport, Density};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::io::{csv_value, points_csv};
use crate::Failure;

/// Normalization draws per model.
const CHECK_DRAWS: usize = 200_000;
/// Heatmap cells per axis.
const GRID: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Gauss4,
    Donut4,
}

#[derive(Serialize)]
struct MemberReport {
    kind: &'static str,
    model: ModelSpec,
    reference_point: Vec<f64>,
    reference: CovReport,
    check: CheckReport,
    tradeoff: TradeoffMetrics,
    samples_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    density_file: Option<String>,
}

#[derive(Serialize)]
struct DemoReport {
    demo: &'static str,
    seed: u64,
    samples: usize,
    target_box: CheckBox,
    models: Vec<MemberReport>,
}

struct Member<'a> {
    kind: &'static str,
    spec: ModelSpec,
    reference_point: Vec<f64>,
    reconstructor: Box<dyn Reconstructor + 'a>,
}

pub fn run(name: DemoName, seed: u64, samples: usize, dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let donut = DonutModels::default();
    let donut_flow = FlowMap::new(2, vec![Layer::DonutNf { r0: 3.0, r1: 8.0 }])?;
    let donut_encoder = donut_flow.encoder();
    let circle = CircleDecoder { radius: donut.r_manifold() };
    let (donut_enc, donut_dec) = (donut.vae_encoder(), donut.vae_decoder());
    let (f_b, g_b) = gaussian_bijective_pair();
    let (f_i, g_i) = gaussian_injective_pair();
    let stoch = GaussianStochastic::new(0.5)?;
    let (g_enc, g_dec) = (stoch.encoder(), stoch.decoder());

    let (label, target, bbox, members): (&'static str, Box<dyn Density>, CheckBox, Vec<Member>) = match name {
        DemoName::Donut4 => (
            "donut4",
            Box::new(donut.target),
            CheckBox { lo: vec![-9.0; 2], hi: vec![9.0; 2] },
            vec![
                Member {
                    kind: "bijective",
                    spec: ModelSpec::DonutNf { r0: 3.0, r1: 8.0 },
                    reference_point: vec![5.0, 0.0],
                    reconstructor: Box::new(DeterministicPair { encoder: &donut_encoder, decoder: &donut_flow }),
                },
                Member {
                    kind: "injective",
                    spec: ModelSpec::DonutAutoencoder { r0: 3.0, r1: 8.0 },
                    reference_point: vec![donut.r_manifold(), 0.0],
                    reconstructor: Box::new(DeterministicPair { encoder: &ArgEncoder, decoder: &circle }),
                },
                Member {
                    kind: "split",
                    spec: ModelSpec::DonutSplit { r0: 3.0, r1: 8.0 },
                    reference_point: vec![5.0, 0.0],
                    reconstructor: Box::new(DonutFiberResample::new(donut.target)),
                },
                Member {
                    kind: "stochastic",
                    spec: ModelSpec::DonutVae { r0: 3.0, r1: 8.0, alpha0: donut.alpha0 },
                    reference_point: vec![5.0, 0.0],
                    reconstructor: Box::new(StochasticPair { encoder: &donut_enc, decoder: &donut_dec }),
                },
            ],
        ),
        DemoName::Gauss4 => (
            "gauss4",
            Box::new(AnisotropicGaussian),
            CheckBox { lo: vec![-6.0, -3.0], hi: vec![6.0, 3.0] },
            vec![
                Member {
                    kind: "bijective",
                    spec: ModelSpec::Bijective {
                        flow: FlowMap::new(2, vec![Layer::linear(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]), vec![0.0; 2])])?,
                        prior: None,
                    },
                    reference_point: vec![0.0, 0.0],
                    reconstructor: Box::new(DeterministicPair { encoder: &f_b, decoder: &g_b }),
                },
                Member {
                    kind: "injective",
                    spec: ModelSpec::GaussianInjective,
                    reference_point: vec![0.0, 0.0],
                    reconstructor: Box::new(DeterministicPair { encoder: &f_i, decoder: &g_i }),
                },
                Member {
                    kind: "split",
                    spec: ModelSpec::GaussianSplit,
                    reference_point: vec![0.0, 0.0],
                    reconstructor: Box::new(GaussianFiberResample),
                },
                Member {
                    kind: "stochastic",
                    spec: ModelSpec::GaussianStochastic { rho: 0.5, encoder_variance_scale: 1.0 },
                    reference_point: vec![0.0, 0.0],
                    reconstructor: Box::new(StochasticPair { encoder: &g_enc, decoder: &g_dec }),
                },
            ],
        ),
    };

    let stream = RngStream::new(seed);
    let mut reports = Vec::new();
    for (k, m) in members.into_iter().enumerate() {
        // Four disjoint streams per member: reference, check, samples, trade-off.
        let base = 16 * k as u64;
        let reference = m.spec.evaluate(&m.reference_point, &mut stream.substream(base))?;
        let check = m.spec.check(Some(&bbox), CHECK_DRAWS, &mut stream.substream(base + 1))?;
        let mut rng = stream.substream(base + 2);
        let cloud = (0..samples).map(|_| m.spec.sample(&mut rng)).collect::<covkit::Result<Vec<_>>>()?;
        let samples_file = format!("{}_samples.csv", m.kind);
        write(dir, &samples_file, &points_csv(2, &cloud)?)?;
        let density_file = if m.spec.full_dimensional() {
            let f = format!("{}_density.csv", m.kind);
            write(dir, &f, &heatmap(&m.spec, &bbox, &stream, base + 3)?)?;
            Some(f)
        } else {
            None
        };
        let tradeoff = tradeoff_metrics(
            target.as_ref(),
            m.reconstructor.as_ref(),
            Distance::SquaredEuclidean,
            Divergence::Energy,
            samples,
            &mut stream.substream(base + 4),
        )?;
        reports.push(MemberReport {
            kind: m.kind,
            model: m.spec,
            reference_point: m.reference_point,
            reference,
            check,
            tradeoff,
            samples_file,
            density_file,
        });
    }
    let report = DemoReport { demo: label, seed, samples, target_box: bbox, models: reports };
    write(dir, "report.json", &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))
}

/// Log-density at the cell centres of a `GRID × GRID` grid over the box.
fn heatmap(spec: &ModelSpec, bbox: &CheckBox, stream: &RngStream, id: u64) -> Result<String, Failure> {
    let mut rng = stream.substream(id);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x0", "x1", "log_density"])?;
    let step = |j: usize| (bbox.hi[j] - bbox.lo[j]) / GRID as f64;
    for i in 0..GRID {
        for k in 0..GRID {
            let x = [bbox.lo[0] + (i as f64 + 0.5) * step(0), bbox.lo[1] + (k as f64 + 0.5) * step(1)];
            let v = spec.evaluate(&x, &mut rng)?.log_density;
            w.write_record([csv_value(x[0]), csv_value(x[1]), csv_value(v)])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.to_string())?)?)
}
