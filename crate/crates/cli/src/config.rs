//! Problem files: a JSON object with the keys below. Parsing is done by hand
//! from a `serde_json::Value` so that every rejection names the key at fault.
//!
//! ```text
//! n          integer
//! A          n*n complex entries, row-major, each [re, im]
//! B          n complex entries
//! Sigma      n*n complex entries (optional, identity)
//! psi        {"type": "constant"[, "value": v]}
//!            | {"type": "samples", "values": [...]}
//!            | {"type": "rational", "num": [...], "den": [...]}
//! grid_size  integer (optional, 2048)
//! tol        real (optional, 1e-9)
//! max_iter   integer (optional, 10000)
//! lambda0    {"type": "scaled-identity"} | {"type": "matrix", "values": [...]}
//! ```

use std::fmt;

use klspec::filterbank::DEFAULT_GRID_SIZE;
use klspec::problem::PriorSpec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{Map, Value};

const KEYS: [&str; 9] = [
    "n", "A", "B", "Sigma", "psi", "grid_size", "tol", "max_iter", "lambda0",
];

/// A schema violation, tied to the key that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub key: String,
    pub message: String,
}

impl InputError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

type Parsed<T> = std::result::Result<T, InputError>;

/// Initial state of the iteration, in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Lambda0 {
    ScaledIdentity,
    Matrix { values: Vec<Complex64> },
}

/// A fully resolved problem file, defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Complex64>,
    #[serde(rename = "B")]
    pub b: Vec<Complex64>,
    #[serde(rename = "Sigma", skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Complex64>>,
    pub psi: PriorSpec,
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: Lambda0,
}

impl ProblemConfig {
    pub fn a_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.n, self.n, &self.a)
    }

    pub fn b_vector(&self) -> DVector<Complex64> {
        DVector::from_column_slice(&self.b)
    }

    pub fn sigma_matrix(&self) -> DMatrix<Complex64> {
        match &self.sigma {
            Some(s) => DMatrix::from_row_slice(self.n, self.n, s),
            None => DMatrix::identity(self.n, self.n),
        }
    }
}

pub fn parse(text: &str) -> Parsed<ProblemConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| InputError::new("<document>", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| InputError::new("<document>", "expected a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(InputError::new(k.clone(), "unknown key"));
    }

    let n = required_usize(obj, "n")?;
    if n == 0 {
        return Err(InputError::new("n", "must be at least 1"));
    }
    let a = complex_list(required(obj, "A")?, "A", n * n)?;
    let b = complex_list(required(obj, "B")?, "B", n)?;
    let sigma = obj
        .get("Sigma")
        .map(|v| complex_list(v, "Sigma", n * n))
        .transpose()?;
    let grid_size = optional_usize(obj, "grid_size")?.unwrap_or(DEFAULT_GRID_SIZE);
    let psi = parse_prior(required(obj, "psi")?, grid_size)?;
    let tol = match obj.get("tol") {
        Some(v) => {
            let t = finite(v, "tol")?;
            if t <= 0.0 {
                return Err(InputError::new("tol", "must be positive"));
            }
            t
        }
        None => 1e-9,
    };
    let max_iter = optional_usize(obj, "max_iter")?.unwrap_or(10_000);
    let lambda0 = match obj.get("lambda0") {
        Some(v) => parse_lambda0(v, n)?,
        None => Lambda0::ScaledIdentity,
    };
    Ok(ProblemConfig {
        n,
        a,
        b,
        sigma,
        psi,
        grid_size,
        tol,
        max_iter,
        lambda0,
    })
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str) -> Parsed<&'a Value> {
    obj.get(key)
        .ok_or_else(|| InputError::new(key, "missing required key"))
}

fn as_usize(v: &Value, key: &str) -> Parsed<usize> {
    v.as_u64()
        .and_then(|u| usize::try_from(u).ok())
        .ok_or_else(|| InputError::new(key, "expected a non-negative integer"))
}

fn required_usize(obj: &Map<String, Value>, key: &str) -> Parsed<usize> {
    as_usize(required(obj, key)?, key)
}

fn optional_usize(obj: &Map<String, Value>, key: &str) -> Parsed<Option<usize>> {
    obj.get(key).map(|v| as_usize(v, key)).transpose()
}

fn finite(v: &Value, key: &str) -> Parsed<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(InputError::new(key, "expected a finite number")),
    }
}

fn real_list(v: &Value, key: &str) -> Parsed<Vec<f64>> {
    let items = v
        .as_array()
        .ok_or_else(|| InputError::new(key, "expected an array of numbers"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, x)| finite(x, &format!("{key}[{i}]")))
        .collect()
}

fn complex_list(v: &Value, key: &str, len: usize) -> Parsed<Vec<Complex64>> {
    let items = v
        .as_array()
        .ok_or_else(|| InputError::new(key, "expected an array of [re, im] pairs"))?;
    if items.len() != len {
        return Err(InputError::new(
            key,
            format!("expected {len} entries, got {}", items.len()),
        ));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let at = format!("{key}[{i}]");
            match item.as_array().map(Vec::as_slice) {
                Some([re, im]) => Ok(Complex64::new(finite(re, &at)?, finite(im, &at)?)),
                _ => Err(InputError::new(at, "expected a [re, im] pair")),
            }
        })
        .collect()
}

fn parse_prior(v: &Value, grid_size: usize) -> Parsed<PriorSpec> {
    let obj = v
        .as_object()
        .ok_or_else(|| InputError::new("psi", "expected an object with a \"type\" key"))?;
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| InputError::new("psi.type", "expected a string"))?;
    let allowed: &[&str] = match kind {
        "constant" => &["type", "value"],
        "samples" => &["type", "values"],
        "rational" => &["type", "num", "den"],
        other => {
            return Err(InputError::new(
                "psi.type",
                format!("unknown prior type {other:?} (constant, samples, rational)"),
            ))
        }
    };
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(InputError::new(format!("psi.{k}"), "unknown key"));
    }
    let field = |k: &str| {
        obj.get(k)
            .ok_or_else(|| InputError::new(format!("psi.{k}"), "missing required key"))
    };
    Ok(match kind {
        "constant" => {
            let value = match obj.get("value") {
                Some(v) => finite(v, "psi.value")?,
                None => 1.0,
            };
            if value <= 0.0 {
                return Err(InputError::new("psi.value", "must be positive"));
            }
            PriorSpec::Constant { value }
        }
        "samples" => {
            let values = real_list(field("values")?, "psi.values")?;
            if values.len() != grid_size {
                return Err(InputError::new(
                    "psi.values",
                    format!("expected grid_size = {grid_size} samples, got {}", values.len()),
                ));
            }
            PriorSpec::Samples { values }
        }
        _ => {
            let num = real_list(field("num")?, "psi.num")?;
            let den = real_list(field("den")?, "psi.den")?;
            if num.is_empty() {
                return Err(InputError::new("psi.num", "must not be empty"));
            }
            if den.is_empty() {
                return Err(InputError::new("psi.den", "must not be empty"));
            }
            PriorSpec::Rational { num, den }
        }
    })
}

fn parse_lambda0(v: &Value, n: usize) -> Parsed<Lambda0> {
    let obj = v
        .as_object()
        .ok_or_else(|| InputError::new("lambda0", "expected an object with a \"type\" key"))?;
    match obj.get("type").and_then(Value::as_str) {
        Some("scaled-identity") => {
            if let Some(k) = obj.keys().find(|k| k.as_str() != "type") {
                return Err(InputError::new(format!("lambda0.{k}"), "unknown key"));
            }
            Ok(Lambda0::ScaledIdentity)
        }
        Some("matrix") => {
            if let Some(k) = obj.keys().find(|k| !["type", "values"].contains(&k.as_str())) {
                return Err(InputError::new(format!("lambda0.{k}"), "unknown key"));
            }
            let values = obj
                .get("values")
                .ok_or_else(|| InputError::new("lambda0.values", "missing required key"))?;
            Ok(Lambda0::Matrix {
                values: complex_list(values, "lambda0.values", n * n)?,
            })
        }
        Some(other) => Err(InputError::new(
            "lambda0.type",
            format!("unknown initial state {other:?} (scaled-identity, matrix)"),
        )),
        None => Err(InputError::new("lambda0.type", "expected a string")),
    }
}
