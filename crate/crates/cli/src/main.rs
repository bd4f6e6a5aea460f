//! `covkit` command-line harness.

mod demo;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use covkit::diagnostics::thread_count;
use covkit::jacobians::bench::{bench_csv, bench_logdet, Strategy};
use covkit::model::ModelFile;
use covkit::numeric::rng::{seeded, RngStream};
use covkit::numeric::CovReport;
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{csv_value, read_model, read_points, write_output};

#[derive(Parser)]
#[command(name = "covkit", version, about = "Change-of-variables density evaluation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Log-density with its factor breakdown at every point of a file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// JSON array of points, or CSV with one point per row.
        #[arg(long)]
        points: PathBuf,
        /// Required for models that sample a code from an encoder.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Draws from the model distribution.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Round-trip or joint-density consistency, normalization and agreement
    /// with the analytic target. Exits 1 when a check fails.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Monte-Carlo draws of the normalization check.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// All four model types of a target: report plus scatter and heatmap data.
    Demo {
        name: demo::DemoName,
        #[arg(long)]
        seed: u64,
        /// Sample-cloud size, also used for the trade-off metrics.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-determinant strategies against the LU baseline.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Exit code 2 for unusable input, 1 for failed checks.
pub enum Failure {
    Input(String),
    Check(Vec<String>),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(names)) => {
            eprintln!("check failed: {}", names.join(", "));
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Eval { model, points, seed, out } => eval(&model, &points, seed, &out),
        Command::Sample { model, seed, samples, out } => sample(&model, seed, samples, &out),
        Command::Check { model, seed, samples, out } => check(&model, seed, samples, &out),
        Command::Demo { name, seed, samples, out } => demo::run(name, seed, samples, &out),
        Command::Bench { dims, reps, out, format } => {
            let rows = bench_logdet(&Strategy::defaults(), &dims, reps)?;
            let text = match format {
                Format::Csv => bench_csv(&rows),
                Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
            };
            write_output(out.as_deref(), &text)
        }
    }
}

fn pool() -> Result<rayon::ThreadPool, Failure> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build()?)
}

#[derive(Serialize)]
struct EvalRow<'a> {
    x: &'a [f64],
    #[serde(flatten)]
    report: &'a CovReport,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a str,
    points: Vec<EvalRow<'a>>,
}

fn eval(model: &std::path::Path, points: &std::path::Path, seed: Option<u64>, out: &OutputArgs) -> Outcome {
    let file = read_model(model)?;
    let spec = &file.spec;
    if spec.is_stochastic() && seed.is_none() {
        return Err(Failure::Input(format!("model type {} samples codes; pass --seed", spec.type_name())));
    }
    let xs = read_points(points)?;
    let dim = spec.dim();
    if let Some((i, p)) = xs.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(Failure::Input(format!("point {i} has dimension {}, model expects {dim}", p.len())));
    }
    let stream = RngStream::new(seed.unwrap_or(0));
    let reports = pool()?.install(|| {
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| spec.evaluate(x, &mut stream.substream(i as u64)).map_err(|e| format!("point {i}: {e}")))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let text = match out.format {
        Format::Json => {
            let rows = xs.iter().zip(&reports).map(|(x, report)| EvalRow { x, report }).collect();
            serde_json::to_string_pretty(&EvalOutput { model: spec.type_name(), points: rows })? + "\n"
        }
        Format::Csv => eval_csv(dim, &xs, &reports)?,
    };
    write_output(out.out.as_deref(), &text)
}

/// Columns `x0..`, `log_density`, one per factor label, and `note` for
/// zero-density points (their single term names the reason).
fn eval_csv(dim: usize, xs: &[Vec<f64>], reports: &[CovReport]) -> Result<String, Failure> {
    let is_note = |r: &CovReport| r.terms.len() == 1 && r.log_density == f64::NEG_INFINITY;
    let mut labels: Vec<&str> = Vec::new();
    for r in reports.iter().filter(|r| !is_note(r)) {
        for t in &r.terms {
            if !labels.contains(&t.label.as_str()) {
                labels.push(&t.label);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("log_density".into());
    header.extend(labels.iter().map(|l| l.to_string()));
    header.push("note".into());
    w.write_record(&header)?;
    for (x, r) in xs.iter().zip(reports) {
        let mut row: Vec<String> = x.iter().map(|v| csv_value(*v)).collect();
        row.push(csv_value(r.log_density));
        let note = is_note(r);
        for l in &labels {
            row.push(if note { String::new() } else { r.term(l).map(csv_value).unwrap_or_default() });
        }
        row.push(if note { r.terms[0].label.clone() } else { String::new() });
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.to_string())?)?)
}

fn sample(model: &std::path::Path, seed: u64, n: usize, out: &OutputArgs) -> Outcome {
    let file = read_model(model)?;
    let mut rng = seeded(seed);
    let draws = (0..n).map(|_| file.spec.sample(&mut rng)).collect::<covkit::Result<Vec<_>>>()?;
    let text = match out.format {
        Format::Json => {
            serde_json::to_string_pretty(&serde_json::json!({ "model": file.spec.type_name(), "samples": draws }))? + "\n"
        }
        Format::Csv => io::points_csv(file.spec.dim(), &draws)?,
    };
    write_output(out.out.as_deref(), &text)
}

fn check(model: &std::path::Path, seed: u64, n: usize, out: &OutputArgs) -> Outcome {
    let ModelFile { spec, check_box } = read_model(model)?;
    let report = spec.check(check_box.as_ref(), n, &mut seeded(seed))?;
    let text = match out.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => io::flat_csv(&serde_json::to_value(&report)?)?,
    };
    write_output(out.out.as_deref(), &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(report.failures))
    }
}
