use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Entries may deviate from symmetry by this much and still count as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Loaded matrices within this asymmetry are symmetrized; beyond it they are rejected.
pub const LOAD_SYMMETRIZE_TOL: f64 = 1e-6;

/// Symmetric, zero-diagonal, non-negative pairwise dissimilarities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    subject_ids: Vec<String>,
    values: Array2<f64>,
    metric_name: String,
}

impl DistanceMatrix {
    pub fn new(
        subject_ids: Vec<String>,
        values: Array2<f64>,
        metric_name: impl Into<String>,
    ) -> Result<Self> {
        let m = DistanceMatrix {
            subject_ids,
            values,
            metric_name: metric_name.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.subject_ids.len();
        if self.values.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} values for {n} subject ids",
                self.values.dim()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.subject_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Invariant(format!("duplicate subject id {dup}")));
        }
        for i in 0..n {
            if self.values[[i, i]] != 0.0 {
                return Err(Error::Invariant(format!(
                    "diagonal entry {i} is {}",
                    self.values[[i, i]]
                )));
            }
            for j in 0..n {
                let v = self.values[[i, j]];
                if !v.is_finite() {
                    return Err(Error::Invariant(format!("entry ({i}, {j}) is {v}")));
                }
                if v < 0.0 {
                    return Err(Error::NegativeDistance {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                let gap = (v - self.values[[j, i]]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(Error::Asymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }
    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        let i = self.require(a)?;
        let j = self.require(b)?;
        Ok(self.values[[i, j]])
    }

    fn require(&self, id: &str) -> Result<usize> {
        self.index_of(id).ok_or_else(|| {
            Error::Invariant(format!(
                "subject {id} is not in the {} matrix",
                self.metric_name
            ))
        })
    }

    /// Restriction to `ids`, in that order.
    pub fn submatrix(&self, ids: &[String]) -> Result<DistanceMatrix> {
        let idx = ids
            .iter()
            .map(|id| self.require(id))
            .collect::<Result<Vec<_>>>()?;
        let values = Array2::from_shape_fn((ids.len(), ids.len()), |(a, b)| {
            self.values[[idx[a], idx[b]]]
        });
        DistanceMatrix::new(ids.to_vec(), values, self.metric_name.clone())
    }

    /// CSV text: `metric,<name>`, the id line, then one row per subject.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Csv {
            context: "distance matrix".into(),
            message: e.to_string(),
        };
        w.write_record(["metric", self.metric_name.as_str()])
            .map_err(csv_err)?;
        w.write_record(&self.subject_ids).map_err(csv_err)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv {
            context: "distance matrix".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
    }

    pub fn from_csv(text: &str, context: &str) -> Result<DistanceMatrix> {
        let bad = |message: String| Error::Csv {
            context: context.to_owned(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = rdr.records();
        let mut next = |what: &str| -> Result<csv::StringRecord> {
            records
                .next()
                .ok_or_else(|| bad(format!("missing {what}")))?
                .map_err(|e| bad(e.to_string()))
        };
        let head = next("metric line")?;
        if head.len() != 2 || &head[0] != "metric" {
            return Err(bad("first line must be `metric,<name>`".into()));
        }
        let name = head[1].to_owned();
        let ids: Vec<String> = next("id line")?.iter().map(str::to_owned).collect();
        let n = ids.len();
        let mut values = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let rec = next(&format!("row {i}"))?;
            if rec.len() != n {
                return Err(bad(format!(
                    "row {i} has {} entries, expected {n}",
                    rec.len()
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                values[[i, j]] = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {i} col {j}: {e}")))?;
            }
        }
        if let Some(extra) = records.next() {
            let extra = extra.map_err(|e| bad(e.to_string()))?;
            if extra.iter().any(|f| !f.trim().is_empty()) {
                return Err(bad("trailing rows after the matrix".into()));
            }
        }

        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = values[[i, j]];
                if !v.is_finite() {
                    return Err(bad(format!("entry ({i}, {j}) is {v}")));
                }
                if v < 0.0 {
                    return Err(Error::NegativeDistance {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                let gap = (v - values[[j, i]]).abs();
                if gap > LOAD_SYMMETRIZE_TOL {
                    return Err(Error::Asymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
                worst = worst.max(gap);
            }
            if values[[i, i]] > LOAD_SYMMETRIZE_TOL {
                return Err(Error::Invariant(format!(
                    "diagonal entry {i} is {}",
                    values[[i, i]]
                )));
            }
            values[[i, i]] = 0.0;
        }
        if worst > 0.0 {
            log::warn!("{context}: symmetrizing matrix with max asymmetry {worst:e}");
            let t = values.t().to_owned();
            values = (&values + &t) * 0.5;
        }
        DistanceMatrix::new(ids, values, name)
    }
}

pub fn store_matrix(m: &DistanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_csv()?).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DistanceMatrix::from_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn csv_round_trip() {
        let v = array![
            [0.0, 0.1 + 0.2, 1e-17],
            [0.1 + 0.2, 0.0, 7.5],
            [1e-17, 7.5, 0.0]
        ];
        let m = DistanceMatrix::new(ids(3), v, "pbc").unwrap();
        let text = m.to_csv().unwrap();
        assert!(text.starts_with("metric,pbc\ns0,s1,s2\n"));
        assert_eq!(DistanceMatrix::from_csv(&text, "t").unwrap(), m);
    }

    #[test]
    fn negative_entry_rejected() {
        let text = "metric,x\na,b\n0,-0.5\n-0.5,0\n";
        assert!(matches!(
            DistanceMatrix::from_csv(text, "t"),
            Err(Error::NegativeDistance { .. })
        ));
    }

    #[test]
    fn small_asymmetry_symmetrized() {
        let text = "metric,x\na,b\n0,1.00000001\n1,0\n";
        let m = DistanceMatrix::from_csv(text, "t").unwrap();
        assert_eq!(m.values()[[0, 1]], m.values()[[1, 0]]);
        assert!((m.values()[[0, 1]] - 1.000000005).abs() < 1e-15);
        let text = "metric,x\na,b\n0,1.001\n1,0\n";
        assert!(matches!(
            DistanceMatrix::from_csv(text, "t"),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn malformed_rejected() {
        assert!(DistanceMatrix::from_csv("metric,x\na,b\n0,1\n", "t").is_err());
        assert!(DistanceMatrix::from_csv("name,x\na\n0\n", "t").is_err());
        assert!(DistanceMatrix::from_csv("metric,x\na,b\n0,zz\n1,0\n", "t").is_err());
    }

    #[test]
    fn constructor_checks() {
        assert!(DistanceMatrix::new(ids(2), array![[0.0, 1.0], [1.1, 0.0]], "x").is_err());
        assert!(DistanceMatrix::new(ids(2), array![[1.0, 1.0], [1.0, 0.0]], "x").is_err());
        assert!(DistanceMatrix::new(ids(2), array![[0.0, 1.0], [1.0, 0.0]], "x").is_ok());
    }
}
