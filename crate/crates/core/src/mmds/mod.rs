//! Metric multidimensional scaling of perceptual distance matrices.

mod eigh;

use std::path::Path;

use ndarray::{Array1, Array2};

pub use eigh::{symmetric_eigh, SymmetricEigen, MAX_SWEEPS, OFF_DIAGONAL_TOL};

use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;
use crate::stats::pearson;

/// Relative threshold (against `||B||_F`) below which an eigenvalue counts as zero.
pub const POSITIVE_EIGENVALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MmdsEmbedding {
    pub subject_ids: Vec<String>,
    /// N x D.
    pub coords: Array2<f64>,
    /// Length D, descending; retained values first, zero padding after.
    pub eigenvalues: Vec<f64>,
    pub fidelity: f64,
}

impl MmdsEmbedding {
    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }

    pub fn coords_of(&self, id: &str) -> Result<Array1<f64>> {
        self.index_of(id)
            .map(|i| self.coords.row(i).to_owned())
            .ok_or_else(|| Error::Config(format!("subject {id:?} has no MMDS coordinates")))
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.coords.dim();
        if n != self.subject_ids.len() || d != self.eigenvalues.len() {
            return Err(Error::ShapeMismatch(format!(
                "embedding coords {:?} for {} ids and {} eigenvalues",
                self.coords.dim(),
                self.subject_ids.len(),
                self.eigenvalues.len()
            )));
        }
        if self.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("embedding coords are not finite".into()));
        }
        if self.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Invariant("eigenvalues are not descending".into()));
        }
        if self.eigenvalues.iter().any(|&v| v < 0.0) {
            return Err(Error::Invariant("negative retained eigenvalue".into()));
        }
        if !(-1.0..=1.0).contains(&self.fidelity) {
            return Err(Error::Invariant(format!(
                "fidelity {} outside [-1, 1]",
                self.fidelity
            )));
        }
        Ok(())
    }

    /// CSV with one `id,c1..cD` row per subject followed by an `eigenvalues` row
    /// and a `fidelity` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let map = |e: csv::Error| Error::Csv {
            context: "embedding".into(),
            message: e.to_string(),
        };
        let mut header = vec!["id".to_owned()];
        header.extend((1..=self.dim()).map(|i| format!("c{i}")));
        w.write_record(&header).map_err(map)?;
        for (id, row) in self.subject_ids.iter().zip(self.coords.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(map)?;
        }
        let mut rec = vec!["eigenvalues".to_owned()];
        rec.extend(self.eigenvalues.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(map)?;
        w.write_record(["fidelity".to_owned(), format!("{:?}", self.fidelity)])
            .map_err(map)?;
        let bytes = w.into_inner().map_err(|e| Error::Csv {
            context: "embedding".into(),
            message: e.to_string(),
        })?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str, context: &str) -> Result<Self> {
        let bad = |m: String| Error::Csv {
            context: context.to_owned(),
            message: m,
        };
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        for rec in r.records() {
            records.push(rec.map_err(|e| bad(e.to_string()))?);
        }
        if records.len() < 3 {
            return Err(bad(
                "expected header, subject rows, eigenvalues and fidelity".into(),
            ));
        }
        let d = records[0].len().saturating_sub(1);
        if records[0].get(0) != Some("id") {
            return Err(bad("header must start with `id`".into()));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("not a number: {s:?}")))
        };
        let n = records.len() - 3;
        let mut ids = Vec::with_capacity(n);
        let mut coords = Array2::zeros((n, d));
        for (i, rec) in records[1..=n].iter().enumerate() {
            if rec.len() != d + 1 {
                return Err(bad(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    rec.len(),
                    d + 1
                )));
            }
            ids.push(rec[0].to_owned());
            for c in 0..d {
                coords[[i, c]] = parse(&rec[c + 1])?;
            }
        }
        let eig = &records[n + 1];
        if eig.get(0) != Some("eigenvalues") || eig.len() != d + 1 {
            return Err(bad("malformed eigenvalues row".into()));
        }
        let eigenvalues = eig.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        let fid = &records[n + 2];
        if fid.get(0) != Some("fidelity") || fid.len() != 2 {
            return Err(bad("malformed fidelity row".into()));
        }
        let e = MmdsEmbedding {
            subject_ids: ids,
            coords,
            eigenvalues,
            fidelity: parse(&fid[1])?,
        };
        e.validate()?;
        Ok(e)
    }
}

pub fn store_embedding(e: &MmdsEmbedding, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, e.to_csv()?).map_err(|err| Error::io(path, err))
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<MmdsEmbedding> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
    MmdsEmbedding::from_csv(&text, &path.display().to_string())
}

/// `B = -1/2 J (M o M) J` with `J = I - 11^T / N`.
pub fn double_center(m: &DistanceMatrix) -> Result<Array2<f64>> {
    m.validate()?;
    let sq = m.values().mapv(|v| v * v);
    let n = sq.nrows();
    let row_means: Vec<f64> = sq.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            // row and column means coincide because M is symmetric
            b[[i, j]] = -0.5 * (sq[[i, j]] - row_means[i] - row_means[j] + grand);
        }
    }
    // exact symmetry regardless of summation order
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (b[[i, j]] + b[[j, i]]);
            b[[i, j]] = v;
            b[[j, i]] = v;
        }
    }
    Ok(b)
}

fn pairwise_euclidean(coords: &Array2<f64>) -> Array2<f64> {
    let n = coords.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let diff = &coords.row(i) - &coords.row(j);
            let v = diff.dot(&diff).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Pearson correlation between embedded and original distances over the
/// upper triangle. Zero-variance cases give 1 when the two sets of distances
/// agree and 0 otherwise.
pub fn embedding_fidelity(coords: &Array2<f64>, m: &DistanceMatrix) -> f64 {
    let emb = pairwise_euclidean(coords);
    let n = emb.nrows();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            a.push(emb[[i, j]]);
            b.push(m.values()[[i, j]]);
        }
    }
    match pearson(&a, &b) {
        Ok(r) => r,
        Err(_) => {
            let scale = b.iter().chain(&a).fold(1.0f64, |s, v| s.max(v.abs()));
            if a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9 * scale) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Classical MDS embedding into `dim` coordinates.
///
/// Uses the top eigenpairs with positive eigenvalues. Columns beyond the number
/// of positive eigenvalues are zero, which also covers `dim > N - 1`.
pub fn embed(m: &DistanceMatrix, dim: usize) -> Result<MmdsEmbedding> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let b = double_center(m)?;
    let n = b.nrows();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut coords = Array2::zeros((n, dim));
    let mut eigenvalues = vec![0.0; dim];
    if norm == 0.0 {
        return Ok(MmdsEmbedding {
            subject_ids: m.subject_ids().to_vec(),
            coords,
            eigenvalues,
            fidelity: 1.0,
        });
    }
    let eig = symmetric_eigh(&b)?;
    let thresh = POSITIVE_EIGENVALUE_TOL * norm;
    let positive = eig.eigenvalues.iter().filter(|&&l| l > thresh).count();
    let negative_mass: f64 = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l < -thresh)
        .map(|l| -l)
        .sum();
    if negative_mass > 0.0 {
        log::warn!(
            "distance matrix {:?} is not Euclidean: dropping negative eigenvalues of total magnitude {negative_mass:.3e}",
            m.metric_name()
        );
    }
    let keep = positive.min(dim);
    for c in 0..keep {
        let lambda = eig.eigenvalues[c];
        let mut v = eig.eigenvectors.column(c).to_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-9) {
            if *first < 0.0 {
                v.mapv_inplace(|x| -x);
            }
        }
        let s = lambda.sqrt();
        for r in 0..n {
            coords[[r, c]] = v[r] * s;
        }
        eigenvalues[c] = lambda;
    }
    let fidelity = embedding_fidelity(&coords, m);
    let e = MmdsEmbedding {
        subject_ids: m.subject_ids().to_vec(),
        coords,
        eigenvalues,
        fidelity,
    };
    e.validate()?;
    Ok(e)
}
