//! Report files: canonical JSON with sorted keys.
//!
//! Floats are written in the shortest form that parses back to the same f64,
//! so every value survives a round trip bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Crate version plus `git describe` output when the build had a repository.
pub fn version_string() -> &'static str {
    env!("HRTF_PERCEPT_VERSION")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub command: String,
    /// Resolved configuration, echoed verbatim.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub notes: Vec<String>,
    pub tables: BTreeMap<String, Value>,
}

impl Report {
    pub fn new(command: impl Into<String>, config: Value) -> Self {
        Report {
            version: version_string().to_owned(),
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            notes: Vec::new(),
            tables: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_owned(), value);
        self
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    pub fn table<T: Serialize>(mut self, name: &str, value: &T) -> Result<Self> {
        self.tables.insert(name.to_owned(), to_value(value)?);
        Ok(self)
    }
}

pub fn to_value<T: Serialize>(value: &T) -> Result<Value> {
    let v = serde_json::to_value(value).map_err(|e| Error::Json {
        context: "report".into(),
        message: e.to_string(),
    })?;
    check_finite(&v, "$")?;
    Ok(v)
}

// serde_json turns NaN and infinities into null; refuse instead of losing them
fn check_finite(v: &Value, path: &str) -> Result<()> {
    match v {
        Value::Null => Err(Error::Numerical(format!(
            "non-finite or missing value at {path}"
        ))),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, x)| check_finite(x, &format!("{path}[{i}]"))),
        Value::Object(map) => map
            .iter()
            .try_for_each(|(k, x)| check_finite(x, &format!("{path}.{k}"))),
        _ => Ok(()),
    }
}

/// Canonical text: object keys sorted, two-space indent, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // round-tripping through Value sorts every map by key
    let v = serde_json::to_value(value).map_err(|e| Error::Json {
        context: "report".into(),
        message: e.to_string(),
    })?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Json {
        context: "report".into(),
        message: e.to_string(),
    })?;
    s.push('\n');
    Ok(s)
}

pub fn emit_report(report: &Report) -> Result<String> {
    canonical_json(report)
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, emit_report(report)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let values = vec![
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            0.9300000000000001,
            123456789.12345679,
        ];
        Report::new("eval", serde_json::json!({"z": 1, "a": {"y": 2, "b": 3}}))
            .seed("train", 7)
            .seed("data", 1)
            .note("aep is a proxy")
            .table("rho", &values)
            .unwrap()
    }

    #[test]
    fn byte_identical_and_sorted() {
        let a = emit_report(&sample()).unwrap();
        let b = emit_report(&sample()).unwrap();
        assert_eq!(a, b);
        let config_pos = a.find("\"config\"").unwrap();
        assert!(a.find("\"command\"").unwrap() < config_pos);
        assert!(a[config_pos..].find("\"b\"").unwrap() < a[config_pos..].find("\"y\"").unwrap());
        assert!(a.find("\"data\"").unwrap() < a.find("\"train\"").unwrap());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let text = emit_report(&sample()).unwrap();
        let back: Report = serde_json::from_str(&text).unwrap();
        let rho: Vec<f64> = serde_json::from_value(back.tables["rho"].clone()).unwrap();
        let orig: [f64; 5] = [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            0.9300000000000001,
            123456789.12345679,
        ];
        for (a, b) in rho.iter().zip(orig) {
            assert_eq!(a.to_bits(), b.to_bits());
            // and at 17 significant digits
            let s17: f64 = format!("{b:.16e}").parse().unwrap();
            assert_eq!(a.to_bits(), s17.to_bits());
        }
        assert_eq!(back, sample());
    }

    #[test]
    fn nan_is_refused() {
        assert!(matches!(
            Report::new("eval", Value::Object(Default::default())).table("x", &vec![1.0, f64::NAN]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn version_is_present() {
        assert!(!version_string().is_empty());
    }
}
