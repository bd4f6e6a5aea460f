//! Log-density results with a per-factor breakdown.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tolerance for `value == Σ breakdown`.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// One additive contribution to a log-density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    #[serde(with = "log_f64")]
    pub value: f64,
}

/// A change-of-variables evaluation: the log-density and the terms it is
/// the left-to-right sum of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    #[serde(with = "log_f64")]
    pub log_density: f64,
    pub terms: Vec<Term>,
}

impl CovReport {
    pub fn from_terms<S: Into<String>>(terms: impl IntoIterator<Item = (S, f64)>) -> Self {
        let terms: Vec<Term> = terms.into_iter().map(|(l, v)| Term { label: l.into(), value: v }).collect();
        let log_density = sum_left(terms.iter().map(|t| t.value));
        Self { log_density, terms }
    }

    /// A zero-density result with the reason as its only term.
    pub fn outside(reason: &str) -> Self {
        Self::from_terms([(reason.to_string(), f64::NEG_INFINITY)])
    }

    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.label == label).map(|t| t.value)
    }

    pub fn is_consistent(&self) -> bool {
        let s = sum_left(self.terms.iter().map(|t| t.value));
        s == self.log_density || (s - self.log_density).abs() <= BREAKDOWN_TOL * (1.0 + s.abs())
    }
}

fn sum_left(it: impl Iterator<Item = f64>) -> f64 {
    let mut acc: Option<f64> = None;
    for v in it {
        acc = Some(match acc {
            None => v,
            Some(a) => a + v,
        });
    }
    acc.unwrap_or(0.0)
}

/// Natural-log density value with an optional breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDensity {
    #[serde(with = "log_f64")]
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Vec<Term>>,
}

impl LogDensity {
    pub fn plain(value: f64) -> Self {
        Self { value, breakdown: None }
    }
}

impl From<CovReport> for LogDensity {
    fn from(r: CovReport) -> Self {
        Self { value: r.log_density, breakdown: Some(r.terms) }
    }
}

/// JSON encoding for log-scale numbers: `-inf` and `inf` as strings, NaN as
/// `"nan"`, everything else as a number.
pub mod log_f64 {
    use super::*;

    pub fn to_json(v: f64) -> serde_json::Value {
        if v.is_finite() {
            serde_json::json!(v)
        } else if v.is_nan() {
            serde_json::json!("nan")
        } else if v > 0.0 {
            serde_json::json!("inf")
        } else {
            serde_json::json!("-inf")
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_json(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid log value {other:?}"))),
            },
        }
    }
}

/// [`log_f64`] for optional values; `None` is `null`.
pub mod opt_log_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(log_f64::to_json).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "log_f64")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
