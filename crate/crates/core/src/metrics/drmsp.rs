//! Polar-error localization distance proxy.
//!
//! Noiseless template matching inside the sagittal band `|lateral| <= 30 deg`:
//! listener `a`'s spectra are the templates, listener `b`'s spectrum at each
//! direction is the stimulus, and the predicted direction is the template with
//! the smallest mean squared dB difference. Templates that tie with the minimum
//! (within `TIE_TOL`) are indistinguishable to the model, and the tie resolves to
//! the one nearest the true polar angle, then to the lowest index. Localizing with
//! one's own set therefore gives zero error, so the polar RMS error with the
//! foreign set is the increase. The result is symmetrized over the two listeners.

use ndarray::Array3;

use crate::data::{wrap_angle_diff, MagnitudeSet};
use crate::dsp::to_db;
use crate::error::{Error, Result};

pub const SAGITTAL_BAND_DEG: f64 = 30.0;
/// Absolute tolerance in dB^2 for two template distances to count as tied.
pub const TIE_TOL: f64 = 1e-9;

/// Indices and polar angles of the directions inside the sagittal band.
pub(crate) fn sagittal_directions(set: &MagnitudeSet) -> Result<Vec<(usize, f64)>> {
    let dirs: Vec<(usize, f64)> = set
        .grid()
        .directions()
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let (lat, pol) = d.interaural();
            (lat.abs() <= SAGITTAL_BAND_DEG).then_some((i, pol))
        })
        .collect();
    if dirs.len() < 2 {
        return Err(Error::TooFewSagittal { found: dirs.len() });
    }
    Ok(dirs)
}

/// One-sided polar RMS error when listener `templates` localizes `stimuli`.
pub(crate) fn drmsp_raw_db(
    templates: &Array3<f64>,
    stimuli: &Array3<f64>,
    band: &[(usize, f64)],
) -> f64 {
    let (_, k, _) = templates.dim();
    let mut sq = 0.0;
    let mut mses = vec![0.0; band.len()];
    for &(d, polar_d) in band {
        for (ti, &(t, _)) in band.iter().enumerate() {
            let mut mse = 0.0;
            for bin in 0..k {
                for ear in 0..2 {
                    let e = stimuli[[d, bin, ear]] - templates[[t, bin, ear]];
                    mse += e * e;
                }
            }
            mses[ti] = mse / (2 * k) as f64;
        }
        let min = mses.iter().copied().fold(f64::INFINITY, f64::min);
        let mut best = f64::INFINITY;
        for (ti, &mse) in mses.iter().enumerate() {
            if mse <= min + TIE_TOL {
                let err = wrap_angle_diff(band[ti].1, polar_d);
                if err.abs() < best.abs() {
                    best = err;
                }
            }
        }
        sq += best * best;
    }
    (sq / band.len() as f64).sqrt()
}

/// `drmsp_raw(a, b)`: RMS polar error of `a` localizing with `b`'s spectra.
pub fn drmsp_raw(a: &MagnitudeSet, b: &MagnitudeSet) -> Result<f64> {
    a.check_compatible(b)?;
    let band = sagittal_directions(a)?;
    Ok(drmsp_raw_db(
        &to_db(&a.to_f64())?,
        &to_db(&b.to_f64())?,
        &band,
    ))
}

/// Symmetrized polar-error distance in degrees.
pub fn drmsp(a: &MagnitudeSet, b: &MagnitudeSet) -> Result<f64> {
    a.check_compatible(b)?;
    let band = sagittal_directions(a)?;
    let (da, db) = (to_db(&a.to_f64())?, to_db(&b.to_f64())?);
    Ok(0.5 * (drmsp_raw_db(&da, &db, &band) + drmsp_raw_db(&db, &da, &band)))
}
