//! Predicted binaural coloration: loudness-weighted sone spectra compared bin by
//! bin with ERB weighting, averaged over directions and ears.

use ndarray::{Array3, ArrayView3};

use crate::data::MagnitudeSet;
use crate::dsp::erb_bandwidth;
use crate::error::{Error, Result};

/// ISO 226:2003 equal-loudness contour at 60 phon: (frequency Hz, SPL dB).
const CONTOUR_60_PHON: [(f64, f64); 29] = [
    (20.0, 109.51),
    (25.0, 104.23),
    (31.5, 99.08),
    (40.0, 94.18),
    (50.0, 89.96),
    (63.0, 85.94),
    (80.0, 82.05),
    (100.0, 78.65),
    (125.0, 75.56),
    (160.0, 72.47),
    (200.0, 69.86),
    (250.0, 67.53),
    (315.0, 65.39),
    (400.0, 63.45),
    (500.0, 62.05),
    (630.0, 60.81),
    (800.0, 59.89),
    (1000.0, 60.01),
    (1250.0, 62.15),
    (1600.0, 63.19),
    (2000.0, 59.96),
    (2500.0, 57.26),
    (3150.0, 56.42),
    (4000.0, 57.57),
    (5000.0, 60.89),
    (6300.0, 66.36),
    (8000.0, 71.66),
    (10000.0, 73.16),
    (12500.0, 68.63),
];

const CONTOUR_PHON: f64 = 60.0;
pub const DEFAULT_REFERENCE_LEVEL_DB: f64 = 75.0;

/// 60-phon contour SPL, linear in log-frequency and held constant beyond the table.
pub fn equal_loudness_spl(f_hz: f64) -> f64 {
    let first = CONTOUR_60_PHON[0];
    let last = CONTOUR_60_PHON[CONTOUR_60_PHON.len() - 1];
    if f_hz <= first.0 {
        return first.1;
    }
    if f_hz >= last.0 {
        return last.1;
    }
    let i = CONTOUR_60_PHON.partition_point(|&(f, _)| f <= f_hz) - 1;
    let (f0, l0) = CONTOUR_60_PHON[i];
    let (f1, l1) = CONTOUR_60_PHON[i + 1];
    let t = (f_hz / f0).ln() / (f1 / f0).ln();
    l0 + t * (l1 - l0)
}

/// Per-bin inverse equal-loudness offsets and normalized ERB weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessTables {
    pub offsets_db: Vec<f64>,
    pub erb_weights: Vec<f64>,
    pub reference_level_db: f64,
}

impl LoudnessTables {
    pub fn new(freq_bins_hz: &[f64]) -> Self {
        Self::with_reference_level(freq_bins_hz, DEFAULT_REFERENCE_LEVEL_DB)
    }

    pub fn with_reference_level(freq_bins_hz: &[f64], reference_level_db: f64) -> Self {
        let offsets_db = freq_bins_hz
            .iter()
            .map(|&f| CONTOUR_PHON - equal_loudness_spl(f))
            .collect();
        let erb: Vec<f64> = freq_bins_hz.iter().map(|&f| erb_bandwidth(f)).collect();
        let total: f64 = erb.iter().sum();
        LoudnessTables {
            offsets_db,
            erb_weights: erb.iter().map(|e| e / total).collect(),
            reference_level_db,
        }
    }

    pub fn for_set(set: &MagnitudeSet) -> Self {
        Self::new(&set.freq_bins_f64())
    }

    pub fn num_bins(&self) -> usize {
        self.offsets_db.len()
    }

    /// Loudness in sones of a linear magnitude in bin `k`.
    #[inline]
    pub fn sones(&self, k: usize, magnitude: f64) -> f64 {
        let phon = 20.0 * magnitude.log10() + self.reference_level_db + self.offsets_db[k];
        ((phon - 40.0) / 10.0).exp2()
    }
}

fn check(x: &ArrayView3<f64>, y: &ArrayView3<f64>, t: &LoudnessTables) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pbc inputs {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    if x.dim().1 != t.num_bins() || t.erb_weights.len() != t.num_bins() || x.dim().2 != 2 {
        return Err(Error::ShapeMismatch(format!(
            "pbc tables have {} bins, spectra {:?}",
            t.num_bins(),
            x.dim()
        )));
    }
    if x.dim().0 == 0 {
        return Err(Error::ShapeMismatch("pbc over zero locations".into()));
    }
    for (idx, &v) in x.indexed_iter().chain(y.indexed_iter()) {
        if !(v > 0.0) {
            return Err(Error::NonPositiveMagnitude {
                value: v,
                index: vec![idx.0, idx.1, idx.2],
            });
        }
    }
    Ok(())
}

/// PBC between `L x K x 2` linear magnitude arrays.
pub fn pbc_arrays(x: ArrayView3<f64>, y: ArrayView3<f64>, t: &LoudnessTables) -> Result<f64> {
    check(&x, &y, t)?;
    let (l, k, _) = x.dim();
    let mut total = 0.0;
    for loc in 0..l {
        for ear in 0..2 {
            let mut c = 0.0;
            for bin in 0..k {
                let d = t.sones(bin, x[[loc, bin, ear]]) - t.sones(bin, y[[loc, bin, ear]]);
                c += t.erb_weights[bin] * d.abs();
            }
            total += c;
        }
    }
    Ok(total / (2 * l) as f64)
}

/// PBC and its gradient with respect to `y`. The subgradient 0 is used where the
/// two sone values coincide.
pub fn pbc_with_grad(
    x: ArrayView3<f64>,
    y: ArrayView3<f64>,
    t: &LoudnessTables,
) -> Result<(f64, Array3<f64>)> {
    check(&x, &y, t)?;
    let (l, k, _) = x.dim();
    let norm = 1.0 / (2 * l) as f64;
    // d sone / d magnitude = sone * ln2/10 * 20/(m ln10)
    let chain = std::f64::consts::LN_2 * 2.0 / std::f64::consts::LN_10;
    let mut grad = Array3::<f64>::zeros(x.dim());
    let mut total = 0.0;
    for loc in 0..l {
        for bin in 0..k {
            let w = t.erb_weights[bin];
            for ear in 0..2 {
                let m = y[[loc, bin, ear]];
                let sx = t.sones(bin, x[[loc, bin, ear]]);
                let sy = t.sones(bin, m);
                let d = sx - sy;
                total += w * d.abs();
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[[loc, bin, ear]] = -sign * w * norm * sy * chain / m;
            }
        }
    }
    Ok((total * norm, grad))
}

pub fn pbc(x: &MagnitudeSet, y: &MagnitudeSet, tables: &LoudnessTables) -> Result<f64> {
    x.check_compatible(y)?;
    pbc_arrays(x.to_f64().view(), y.to_f64().view(), tables)
}

/// Gradient of `pbc(x, y)` with respect to the linear magnitudes of `y`.
pub fn pbc_grad(
    x: &MagnitudeSet,
    y: &MagnitudeSet,
    tables: &LoudnessTables,
) -> Result<Array3<f64>> {
    x.check_compatible(y)?;
    Ok(pbc_with_grad(x.to_f64().view(), y.to_f64().view(), tables)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_tables(k: usize, reference: f64) -> LoudnessTables {
        LoudnessTables {
            offsets_db: vec![0.0; k],
            erb_weights: vec![1.0 / k as f64; k],
            reference_level_db: reference,
        }
    }

    #[test]
    fn contour_anchor_points() {
        assert_eq!(equal_loudness_spl(1000.0), 60.01);
        assert_eq!(equal_loudness_spl(10.0), 109.51);
        assert_eq!(equal_loudness_spl(16000.0), 68.63);
        let mid = equal_loudness_spl((1000f64 * 1250.0).sqrt());
        assert!((mid - 0.5 * (60.01 + 62.15)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_stays_between_neighbours() {
        for w in CONTOUR_60_PHON.windows(2) {
            let (lo, hi) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
            for i in 1..20 {
                let f = w[0].0 + (w[1].0 - w[0].0) * i as f64 / 20.0;
                let v = equal_loudness_spl(f);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn hand_evaluated_toy() {
        // 1.0 -> 40 phon -> 1 sone; 10^(10/20) -> 50 phon -> 2 sones
        let t = flat_tables(1, 40.0);
        let x = Array3::from_elem((1, 1, 2), 1.0);
        let y = Array3::from_elem((1, 1, 2), 10f64.powf(0.5));
        let v = pbc_arrays(x.view(), y.view(), &t).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_symmetry_and_zero_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..6).map(|i| 300.0 + 1000.0 * i as f64).collect();
        let t = LoudnessTables::new(&f);
        let x = Array3::from_shape_fn((3, 6, 2), |_| rng.random_range(0.05..2.0));
        let y = Array3::from_shape_fn((3, 6, 2), |_| rng.random_range(0.05..2.0));
        assert_eq!(pbc_arrays(x.view(), x.view(), &t).unwrap(), 0.0);
        assert_eq!(
            pbc_arrays(x.view(), y.view(), &t).unwrap(),
            pbc_arrays(y.view(), x.view(), &t).unwrap()
        );
        let (_, g) = pbc_with_grad(x.view(), x.view(), &t).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_scales_with_erb_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = [500.0, 2000.0, 7000.0];
        let t = LoudnessTables::new(&f);
        let mut scaled = t.clone();
        scaled.erb_weights.iter_mut().for_each(|w| *w *= 3.5);
        let x = Array3::from_shape_fn((2, 3, 2), |_| rng.random_range(0.05..2.0));
        let y = Array3::from_shape_fn((2, 3, 2), |_| rng.random_range(0.05..2.0));
        let (_, g) = pbc_with_grad(x.view(), y.view(), &t).unwrap();
        let (_, gs) = pbc_with_grad(x.view(), y.view(), &scaled).unwrap();
        for (a, b) in g.iter().zip(gs.iter()) {
            assert!((3.5 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn monotone_in_uniform_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = [400.0, 1500.0, 6000.0, 12000.0];
        let t = LoudnessTables::new(&f);
        let x = Array3::from_shape_fn((4, 4, 2), |_| rng.random_range(0.05..2.0));
        let mut prev = 0.0;
        for i in 1..40 {
            let c = 1.0 + 0.1 * i as f64;
            let y = x.mapv(|v| c * v);
            let v = pbc_arrays(x.view(), y.view(), &t).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = flat_tables(2, 75.0);
        let x = Array3::from_elem((1, 2, 2), 1.0);
        let y = Array3::from_elem((2, 2, 2), 1.0);
        assert!(pbc_arrays(x.view(), y.view(), &t).is_err());
        let t3 = flat_tables(3, 75.0);
        assert!(pbc_arrays(x.view(), x.view(), &t3).is_err());
    }
}
