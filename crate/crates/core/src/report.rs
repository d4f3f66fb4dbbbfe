//! Validation metrics and deterministic CSV / JSON serialization.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Mean of `|pred - meas| / meas`.
pub fn mape<T: Scalar>(pairs: &[(T, T)]) -> Result<T> {
    if pairs.is_empty() {
        return Err(SimError::Metric("MAPE of an empty set".into()));
    }
    let mut sum = T::zero();
    for &(p, m) in pairs {
        if m <= T::zero() {
            return Err(SimError::Metric("measured values must be > 0".into()));
        }
        sum = sum + (p - m).abs_val() / m;
    }
    Ok(sum / T::from_count(pairs.len() as u128))
}

/// `1 - SS_res / SS_tot` with the measured values as ground truth.
pub fn r_squared<T: Scalar>(pairs: &[(T, T)]) -> Result<T> {
    if pairs.len() < 2 {
        return Err(SimError::Metric("R^2 needs at least two rows".into()));
    }
    let n = T::from_count(pairs.len() as u128);
    let mean = pairs.iter().fold(T::zero(), |a, &(_, m)| a + m) / n;
    let (mut res, mut tot) = (T::zero(), T::zero());
    for &(p, m) in pairs {
        res = res + (m - p) * (m - p);
        tot = tot + (m - mean) * (m - mean);
    }
    if tot == T::zero() {
        return Err(SimError::Metric("measured values have zero variance".into()));
    }
    Ok(T::one() - res / tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub config_id: String,
    pub predicted_s: f64,
    pub measured_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeasurementSet {
    pub rows: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn new(rows: Vec<Measurement>) -> Result<Self> {
        let s = MeasurementSet { rows };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.config_id.as_str()) {
                return Err(SimError::Metric(format!("duplicate config_id {}", r.config_id)));
            }
            if !(r.measured_s > 0.0) {
                return Err(SimError::Metric(format!("measured_s must be > 0 for {}", r.config_id)));
            }
        }
        Ok(())
    }

    /// CSV with the header `config_id,predicted_s,measured_s`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| SimError::Io(e.to_string()))?.clone();
        let want = ["config_id", "predicted_s", "measured_s"];
        if headers.iter().collect::<Vec<_>>() != want {
            return Err(SimError::Metric(format!(
                "measurement header must be {}, got {}",
                want.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = rdr
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| SimError::Metric(format!("measurement row {}: {e}", i + 2))))
            .collect::<Result<Vec<Measurement>>>()?;
        Self::new(rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.predicted_s, r.measured_s)).collect()
    }

    pub fn mape(&self) -> Result<f64> {
        mape(&self.pairs())
    }

    pub fn r_squared(&self) -> Result<f64> {
        r_squared(&self.pairs())
    }
}

/// Round to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i128),
    Num(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => {
                let r = round_sig(*v);
                if r == 0.0 {
                    "0".into()
                } else {
                    r.to_string()
                }
            }
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => match i64::try_from(*v) {
                Ok(i) => json!(i),
                Err(_) => json!(v.to_string()),
            },
            Cell::Num(v) => {
                let r = round_sig(*v);
                if r.is_finite() && r == r.trunc() && r.abs() < 1e15 {
                    json!(r as i64)
                } else {
                    json!(r)
                }
            }
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<f32> for Cell {
    fn from(v: f32) -> Self {
        Cell::Num(v as f64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i128)
    }
}
impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i128)
    }
}
impl From<u128> for Cell {
    fn from(v: u128) -> Self {
        i128::try_from(v).map(Cell::Int).unwrap_or(Cell::Num(v as f64))
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// One result row; field order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub kind: String,
    pub config_id: String,
    pub fields: Vec<(String, Cell)>,
}

impl Row {
    pub fn new(kind: impl Into<String>, config_id: impl Into<String>) -> Self {
        Row {
            kind: kind.into(),
            config_id: config_id.into(),
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, v: impl Into<Cell>) -> Self {
        self.fields.push((name.to_string(), v.into()));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Cell> {
        self.fields.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub mode: String,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    pub rows: Vec<Row>,
    pub metrics: Vec<(String, Cell)>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(mode: impl Into<String>, config: Value) -> Self {
        RunReport {
            tool: "fabricsim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            mode: mode.into(),
            config,
            rows: Vec::new(),
            metrics: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn sorted_rows(&self) -> Vec<&Row> {
        let mut rows: Vec<&Row> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.config_id.cmp(&b.config_id));
        rows
    }

    fn columns(rows: &[&Row]) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for r in rows {
            for (k, _) in &r.fields {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let rows = self.sorted_rows();
        let mut cols = Self::columns(&rows);
        if !self.metrics.is_empty() && !cols.iter().any(|c| c == "value") {
            cols.push("value".into());
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| SimError::Io(e.to_string());
        let mut header = vec!["kind".to_string(), "config_id".to_string()];
        header.extend(cols.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for r in rows {
            let mut rec = vec![r.kind.clone(), r.config_id.clone()];
            rec.extend(cols.iter().map(|c| r.get(c).map(Cell::csv).unwrap_or_default()));
            w.write_record(&rec).map_err(io)?;
        }
        for (name, v) in &self.metrics {
            let mut rec = vec!["metric".to_string(), name.clone()];
            rec.extend(cols.iter().map(|c| if c == "value" { v.csv() } else { String::new() }));
            w.write_record(&rec).map_err(io)?;
        }
        w.into_inner().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn to_json_value(&self) -> Value {
        let rows: Vec<Value> = self
            .sorted_rows()
            .into_iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("kind".into(), json!(r.kind));
                m.insert("config_id".into(), json!(r.config_id));
                for (k, v) in &r.fields {
                    m.insert(k.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let mut metrics = Map::new();
        for (k, v) in &self.metrics {
            metrics.insert(k.clone(), v.json());
        }
        let mut doc = Map::new();
        doc.insert("tool".into(), json!(self.tool));
        doc.insert("version".into(), json!(self.version));
        doc.insert("mode".into(), json!(self.mode));
        doc.insert("config".into(), self.config.clone());
        doc.insert("rows".into(), Value::Array(rows));
        doc.insert("metrics".into(), Value::Object(metrics));
        doc.insert("warnings".into(), json!(self.warnings));
        Value::Object(doc)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(&self.to_json_value()).map_err(|e| SimError::Io(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn emit(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn write(&self, format: Format, path: &Path) -> Result<()> {
        std::fs::write(path, self.emit(format)?).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }
}

/// Zero-padded id so lexical order matches numeric order.
pub fn point_id(prefix: &str, index: usize) -> String {
    format!("{prefix}{index:06}")
}
