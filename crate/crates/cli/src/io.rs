//! File input and output helpers.

use std::path::Path;

use covkit::model::ModelFile;
use serde_json::Value;

use crate::Failure;

pub fn read_model(path: &Path) -> Result<ModelFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    file.spec.validate().map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(file)
}

/// `.csv` files hold one point per row with an optional header; anything
/// else is a JSON array of points.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(p) => points.push(p),
            Err(_) if i == 0 => {}
            Err(e) => {
                let line = rec.position().map_or(i as u64 + 1, |p| p.line());
                return Err(Failure::Input(format!("{}: line {line}: {e}", path.display())));
            }
        }
    }
    Ok(points)
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

/// `−∞` is an empty cell.
pub fn csv_value(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        String::new()
    } else if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

pub fn points_csv(dim: usize, points: &[Vec<f64>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..dim).map(|i| format!("x{i}")))?;
    for p in points {
        w.write_record(p.iter().map(|v| csv_value(*v)))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.to_string())?)?)
}

/// `key,value` rows of a JSON object, nested keys joined with dots.
pub fn flat_csv(v: &Value) -> Result<String, Failure> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), v, out);
                }
            }
            Value::String(s) if s == "-inf" => out.push((prefix.into(), String::new())),
            Value::String(s) => out.push((prefix.into(), s.clone())),
            Value::Null => out.push((prefix.into(), String::new())),
            other => out.push((prefix.into(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", v, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.to_string())?)?)
}
