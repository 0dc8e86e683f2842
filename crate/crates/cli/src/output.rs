//! Deterministic writers: pretty JSON with sorted keys and CSV tables, all floats at 17
//! significant digits so that re-parsing recovers the exact bits.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

/// Formats a float with 17 significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON with two-space indentation and sorted object keys. Non-finite floats
/// become `null`.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report types serialize to JSON");
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap_or(f64::NAN);
                if x.is_finite() {
                    out.push_str(&format_float(x));
                } else {
                    out.push_str("null");
                }
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_value(out, &map[*key], depth + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    fs::write(path, to_pretty_json(value))
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}

fn field_f64(record: &csv::StringRecord, i: usize) -> Result<f64, TableError> {
    record
        .get(i)
        .ok_or_else(|| TableError::Malformed(format!("missing column {i}")))?
        .parse()
        .map_err(|_| TableError::Malformed(format!("column {i} is not a number")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Discrete equation residual; absent at the two endpoints.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub dim: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    fn header(dim: usize) -> Vec<String> {
        let mut h = vec!["k".to_string(), "t".to_string()];
        h.extend((1..=dim).map(|i| format!("q{i}")));
        h.extend((1..=dim).map(|i| format!("v{i}")));
        h.push("residual".into());
        h
    }

    pub fn to_csv(&self) -> Result<String, TableError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header(self.dim))?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string(), format_float(r.t)];
            rec.extend(r.q.iter().map(|x| format_float(*x)));
            rec.extend(r.v.iter().map(|x| format_float(*x)));
            rec.push(r.residual.map(format_float).unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| TableError::Malformed(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.len() < 5 || (header.len() - 3) % 2 != 0 {
            return Err(TableError::Malformed("unexpected trajectory header".into()));
        }
        let dim = (header.len() - 3) / 2;
        if header.iter().collect::<Vec<_>>() != Self::header(dim) {
            return Err(TableError::Malformed("unexpected trajectory header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let k = rec[0].parse().map_err(|_| TableError::Malformed("k is not an integer".into()))?;
            let q = (0..dim).map(|i| field_f64(&rec, 2 + i)).collect::<Result<_, _>>()?;
            let v = (0..dim).map(|i| field_f64(&rec, 2 + dim + i)).collect::<Result<_, _>>()?;
            let last = 2 + 2 * dim;
            let residual = if rec[last].is_empty() { None } else { Some(field_f64(&rec, last)?) };
            rows.push(TrajectoryRow { k, t: field_f64(&rec, 1)?, q, v, residual });
        }
        Ok(Self { dim, rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub h: f64,
    pub error: f64,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderTable {
    pub rows: Vec<OrderRow>,
}

impl OrderTable {
    pub fn to_csv(&self) -> Result<String, TableError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["h", "error", "used"])?;
        for r in &self.rows {
            w.write_record([format_float(r.h), format_float(r.error), r.used.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| TableError::Malformed(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        if r.headers()?.iter().collect::<Vec<_>>() != ["h", "error", "used"] {
            return Err(TableError::Malformed("unexpected order header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let used = match &rec[2] {
                "true" => true,
                "false" => false,
                other => return Err(TableError::Malformed(format!("used must be true/false, got {other}"))),
            };
            rows.push(OrderRow { h: field_f64(&rec, 0)?, error: field_f64(&rec, 1)?, used });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(format_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(format_float(0.25), "2.5000000000000000e-1");
    }

    #[test]
    fn json_keys_are_sorted_and_nan_is_null() {
        let mut m = BTreeMap::new();
        m.insert("zeta", serde_json::json!(1.5));
        m.insert("alpha", serde_json::json!([1, f64::NAN]));
        m.insert("mid", serde_json::json!({"b": true, "a": "x"}));
        let text = to_pretty_json(&m);
        let a = text.find("\"alpha\"").unwrap();
        let z = text.find("\"zeta\"").unwrap();
        assert!(a < z);
        assert!(text.contains("1.5000000000000000e0"));
        assert!(text.contains("null"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["mid"]["a"], "x");
    }

    #[test]
    fn tables_round_trip() {
        let traj = TrajectoryTable {
            dim: 2,
            rows: vec![
                TrajectoryRow { k: 0, t: 0.0, q: vec![0.1, 1.0 / 3.0], v: vec![-1.0, 2e-17], residual: None },
                TrajectoryRow { k: 1, t: 0.1, q: vec![0.2, 0.3], v: vec![0.5, 0.25], residual: Some(3.3e-15) },
            ],
        };
        assert_eq!(TrajectoryTable::from_csv(&traj.to_csv().unwrap()).unwrap(), traj);
        let order = OrderTable { rows: vec![OrderRow { h: 0.2, error: 1e-3 / 7.0, used: true }, OrderRow { h: 0.1, error: 1e-16, used: false }] };
        assert_eq!(OrderTable::from_csv(&order.to_csv().unwrap()).unwrap(), order);
    }
}
