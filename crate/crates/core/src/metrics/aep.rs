//! Externalization distance proxy.
//!
//! Correlation-based stand-in for the template comparison of the full
//! externalization model: 60 % monaural spectral similarity plus 40 %
//! interaural (ILD) similarity, turned into a distance as `1 - similarity`.
//! Values computed by the reference auditory model should enter through
//! [`super::load_matrix`] instead.

use ndarray::Array3;

use crate::data::MagnitudeSet;
use crate::dsp::to_db;
use crate::error::Result;

pub const MONAURAL_WEIGHT: f64 = 0.6;
pub const INTERAURAL_WEIGHT: f64 = 0.4;

/// Similarity in [0, 1] of two spectra: `(r + 1) / 2` with `r` the Pearson
/// correlation. Zero-variance inputs give 1 when both are the same constant
/// and 0.5 otherwise.
pub(crate) fn spectral_similarity(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.5;
    }
    let r = (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0);
    0.5 * (r + 1.0)
}

pub(crate) fn aep_db(x: &Array3<f64>, y: &Array3<f64>) -> f64 {
    let (l, k, _) = x.dim();
    let mut total = 0.0;
    let mut xs = [vec![0.0; k], vec![0.0; k]];
    let mut ys = [vec![0.0; k], vec![0.0; k]];
    let (mut ild_x, mut ild_y) = (vec![0.0; k], vec![0.0; k]);
    for loc in 0..l {
        for bin in 0..k {
            for ear in 0..2 {
                xs[ear][bin] = x[[loc, bin, ear]];
                ys[ear][bin] = y[[loc, bin, ear]];
            }
            ild_x[bin] = xs[0][bin] - xs[1][bin];
            ild_y[bin] = ys[0][bin] - ys[1][bin];
        }
        let mono =
            0.5 * (spectral_similarity(&xs[0], &ys[0]) + spectral_similarity(&xs[1], &ys[1]));
        let inter = spectral_similarity(&ild_x, &ild_y);
        total += 1.0 - (MONAURAL_WEIGHT * mono + INTERAURAL_WEIGHT * inter);
    }
    (total / l as f64).clamp(0.0, 1.0)
}

/// Proxy externalization distance in [0, 1].
pub fn aep(x: &MagnitudeSet, y: &MagnitudeSet) -> Result<f64> {
    x.check_compatible(y)?;
    Ok(aep_db(&to_db(&x.to_f64())?, &to_db(&y.to_f64())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SphericalGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_from_db(db: &Array3<f64>) -> MagnitudeSet {
        let (l, k, _) = db.dim();
        let grid = SphericalGrid::equiangular(l, 1).unwrap();
        let bins = (0..k).map(|i| 250.0 * (i + 1) as f32).collect();
        MagnitudeSet::from_f64("x", grid, bins, &db.mapv(|v| 10f64.powf(v / 20.0))).unwrap()
    }

    #[test]
    fn self_distance_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let db = Array3::from_shape_fn((3, 10, 2), |_| rng.random_range(-20.0..6.0));
        let x = set_from_db(&db);
        assert_eq!(aep(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn anticorrelated_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 2;
        let k = 8;
        let db = Array3::from_shape_fn((l, k, 2), |_| rng.random_range(-20.0..0.0));
        let mut neg = db.clone();
        for loc in 0..l {
            for ear in 0..2 {
                let mean: f64 = (0..k).map(|b| db[[loc, b, ear]]).sum::<f64>() / k as f64;
                for b in 0..k {
                    neg[[loc, b, ear]] = 2.0 * mean - db[[loc, b, ear]];
                }
            }
        }
        // negating both ears about their means negates the ILD profile as well
        let v = aep_db(&db, &neg);
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (l, k) = (5, 12);
        let a = Array3::from_shape_fn((l, k, 2), |_| rng.random_range(-20.0..6.0));
        let b = Array3::from_shape_fn((l, k, 2), |_| rng.random_range(-20.0..6.0));
        let pearson = |u: &[f64], v: &[f64]| {
            let n = u.len() as f64;
            let mu = u.iter().sum::<f64>() / n;
            let mv = v.iter().sum::<f64>() / n;
            let c: f64 = u
                .iter()
                .zip(v)
                .map(|(x, y)| (x - mu) * (y - mv))
                .sum::<f64>()
                / n;
            let su = (u.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
            let sv = (v.iter().map(|y| (y - mv).powi(2)).sum::<f64>() / n).sqrt();
            c / (su * sv)
        };
        let mut total = 0.0;
        for loc in 0..l {
            let col =
                |t: &Array3<f64>, ear: usize| (0..k).map(|i| t[[loc, i, ear]]).collect::<Vec<_>>();
            let ild = |t: &Array3<f64>| {
                (0..k)
                    .map(|i| t[[loc, i, 0]] - t[[loc, i, 1]])
                    .collect::<Vec<_>>()
            };
            let mono = ((pearson(&col(&a, 0), &col(&b, 0)) + 1.0) / 2.0
                + (pearson(&col(&a, 1), &col(&b, 1)) + 1.0) / 2.0)
                / 2.0;
            let inter = (pearson(&ild(&a), &ild(&b)) + 1.0) / 2.0;
            total += 1.0 - (0.6 * mono + 0.4 * inter);
        }
        assert!((aep_db(&a, &b) - total / l as f64).abs() < 1e-9);
        assert_eq!(aep_db(&a, &b), aep_db(&b, &a));
    }

    #[test]
    fn degenerate_constant_spectra() {
        assert_eq!(spectral_similarity(&[1.0; 4], &[1.0; 4]), 1.0);
        assert_eq!(spectral_similarity(&[1.0; 4], &[2.0; 4]), 0.5);
        assert_eq!(spectral_similarity(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), 0.5);
    }
}
