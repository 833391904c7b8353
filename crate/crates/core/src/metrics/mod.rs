//! Objective perceptual dissimilarities between HRTF magnitude sets.

mod aep;
mod drmsp;
mod matrix;
mod pbc;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use aep::{aep, INTERAURAL_WEIGHT, MONAURAL_WEIGHT};
pub use drmsp::{drmsp, drmsp_raw, SAGITTAL_BAND_DEG, TIE_TOL};
pub use matrix::{load_matrix, store_matrix, DistanceMatrix, LOAD_SYMMETRIZE_TOL, SYMMETRY_TOL};
pub use pbc::{
    equal_loudness_spl, pbc, pbc_arrays, pbc_grad, pbc_with_grad, LoudnessTables,
    DEFAULT_REFERENCE_LEVEL_DB,
};

use crate::data::MagnitudeSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pbc,
    Aep,
    Drmsp,
}

impl Metric {
    /// Label written into matrices and reports. The AEP and DRMSP
    /// implementations are proxies and say so.
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Pbc => "pbc",
            Metric::Aep => "aep-proxy",
            Metric::Drmsp => "drmsp-proxy",
        }
    }

    pub fn evaluate(&self, a: &MagnitudeSet, b: &MagnitudeSet) -> Result<f64> {
        match self {
            Metric::Pbc => pbc(a, b, &LoudnessTables::for_set(a)),
            Metric::Aep => aep(a, b),
            Metric::Drmsp => drmsp(a, b),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbc" => Ok(Metric::Pbc),
            "aep" | "aep-proxy" => Ok(Metric::Aep),
            "drmsp" | "drmsp-proxy" => Ok(Metric::Drmsp),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// All pairwise metric values. Pairs are evaluated in parallel; each entry is
/// written to a fixed position so the result does not depend on scheduling.
pub fn pairwise_matrix(sets: &[MagnitudeSet], metric: Metric) -> Result<DistanceMatrix> {
    let n = sets.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "pairwise matrix needs at least 2 subjects, got {n}"
        )));
    }
    for s in &sets[1..] {
        sets[0].check_compatible(s)?;
    }
    let tables = LoudnessTables::for_set(&sets[0]);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match metric {
            Metric::Pbc => pbc(&sets[i], &sets[j], &tables),
            _ => metric.evaluate(&sets[i], &sets[j]),
        })
        .collect::<Result<_>>()?;
    let mut m = Array2::<f64>::zeros((n, n));
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        m[[i, j]] = v;
        m[[j, i]] = v;
    }
    DistanceMatrix::new(
        sets.iter().map(|s| s.subject_id().to_owned()).collect(),
        m,
        metric.label(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_subject, SphericalGrid};

    fn subjects(seeds: &[u64]) -> Vec<MagnitudeSet> {
        let grid = SphericalGrid::equiangular(6, 3).unwrap();
        let bins: Vec<f32> = (1..=20).map(|k| 750.0 * k as f32).collect();
        seeds
            .iter()
            .map(|&s| synth_subject(s, &grid, &bins).unwrap())
            .collect()
    }

    #[test]
    fn duplicated_subject_gives_zero_matrix() {
        let s = subjects(&[3]);
        let dup = vec![s[0].clone(), s[0].clone().with_subject_id("copy")];
        for metric in [Metric::Pbc, Metric::Aep, Metric::Drmsp] {
            let m = pairwise_matrix(&dup, metric).unwrap();
            assert!(m.values().iter().all(|&v| v == 0.0), "{metric}");
        }
    }

    #[test]
    fn matches_individual_calls() {
        let s = subjects(&[1, 2, 3]);
        for metric in [Metric::Pbc, Metric::Aep, Metric::Drmsp] {
            let m = pairwise_matrix(&s, metric).unwrap();
            assert_eq!(m.metric_name(), metric.label());
            for i in 0..3 {
                for j in 0..3 {
                    let expected = if i == j {
                        0.0
                    } else {
                        metric.evaluate(&s[i], &s[j]).unwrap()
                    };
                    assert_eq!(m.values()[[i, j]], expected);
                }
            }
            m.validate().unwrap();
        }
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("AEP".parse::<Metric>().unwrap(), Metric::Aep);
        assert_eq!("drmsp-proxy".parse::<Metric>().unwrap(), Metric::Drmsp);
        assert!("sde".parse::<Metric>().is_err());
    }
}
