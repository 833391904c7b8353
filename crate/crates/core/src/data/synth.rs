//! Deterministic synthetic HRTF magnitudes.
//!
//! Each subject is a head-shadow shelf, an elevation-dependent pinna notch and a
//! low-order spectral ripple, all in dB, with per-subject parameters drawn from a
//! seeded ChaCha stream.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coords::{interaural_coords, sin_deg};
use super::sets::{MagnitudeSet, SphericalGrid};
use crate::error::{Error, Result};

pub const SYNTH_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub head_radius_m: f64,
    pub notch_hz: f64,
    pub notch_depth_db: f64,
    pub notch_width_oct: f64,
    pub ripple_db: [f64; 4],
}

impl SynthParams {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_radius_m = rng.random_range(0.07..=0.10);
        let notch_hz = rng.random_range(6000.0..=9000.0);
        let notch_depth_db = rng.random_range(8.0..=20.0);
        let notch_width_oct = rng.random_range(0.08..=0.15);
        let mut ripple_db = [0.0; 4];
        for c in &mut ripple_db {
            *c = rng.random_range(-1.5..=1.5);
        }
        SynthParams {
            head_radius_m,
            notch_hz,
            notch_depth_db,
            notch_width_oct,
            ripple_db,
        }
    }

    pub fn head_shadow_db(&self, f_hz: f64, lateral_toward_ear_deg: f64) -> f64 {
        -(self.head_radius_m / 0.0875)
            * 12.0
            * (f_hz / 16000.0).powf(0.8)
            * (-sin_deg(lateral_toward_ear_deg)).max(0.0)
    }

    pub fn notch_db(&self, f_hz: f64, elevation_deg: f64) -> f64 {
        let centre = self.notch_hz * 2f64.powf(elevation_deg / 120.0);
        let x = (f_hz / centre).log2();
        -self.notch_depth_db * (-(x * x) / (2.0 * self.notch_width_oct.powi(2))).exp()
    }

    pub fn ripple_db(&self, f_hz: f64, elevation_deg: f64) -> f64 {
        self.ripple_db
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let m = (i + 1) as f64;
                c * (2.0 * std::f64::consts::PI * m * f_hz / 16000.0
                    + m * elevation_deg.to_radians())
                .cos()
            })
            .sum()
    }

    /// Gain in dB for `ear` (0 = left, 1 = right).
    pub fn gain_db(&self, f_hz: f64, azimuth_deg: f64, elevation_deg: f64, ear: usize) -> f64 {
        let (lateral, _) = interaural_coords(azimuth_deg, elevation_deg);
        let toward_ear = if ear == 0 { lateral } else { -lateral };
        self.head_shadow_db(f_hz, toward_ear)
            + self.notch_db(f_hz, elevation_deg)
            + self.ripple_db(f_hz, elevation_deg)
    }
}

/// Synthesizes one subject with id `synth-<seed>`.
pub fn synth_subject(
    seed: u64,
    grid: &SphericalGrid,
    freq_bins_hz: &[f32],
) -> Result<MagnitudeSet> {
    synth_with_params(
        format!("synth-{seed:04}"),
        &SynthParams::from_seed(seed),
        grid,
        freq_bins_hz,
    )
}

pub fn synth_with_params(
    subject_id: String,
    params: &SynthParams,
    grid: &SphericalGrid,
    freq_bins_hz: &[f32],
) -> Result<MagnitudeSet> {
    if grid.is_empty() {
        return Err(Error::Invariant("empty grid".into()));
    }
    if let Some(f) = freq_bins_hz
        .iter()
        .find(|f| !(f.is_finite() && **f > 0.0 && **f <= 24000.0))
    {
        return Err(Error::Invariant(format!(
            "synthetic bin {f} Hz outside (0, 24000]"
        )));
    }
    let k = freq_bins_hz.len();
    let mut data = Array3::<f64>::zeros((grid.len(), k, 2));
    for (loc, d) in grid.directions().iter().enumerate() {
        for (bin, &f) in freq_bins_hz.iter().enumerate() {
            for ear in 0..2 {
                let g = params.gain_db(f as f64, d.azimuth_deg as f64, d.elevation_deg as f64, ear);
                data[[loc, bin, ear]] = 10f64.powf(g / 20.0).max(SYNTH_FLOOR);
            }
        }
    }
    MagnitudeSet::from_f64(subject_id, grid.clone(), freq_bins_hz.to_vec(), &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{retained_bins, PreprocessConfig};
    use crate::metrics::{pbc, LoudnessTables};

    fn bins() -> Vec<f32> {
        let c = PreprocessConfig::default();
        retained_bins(48000.0, &c)
            .iter()
            .map(|&f| f as f32)
            .collect()
    }

    #[test]
    fn deterministic() {
        let g = SphericalGrid::equiangular(4, 4).unwrap();
        let b = bins();
        assert_eq!(
            synth_subject(3, &g, &b).unwrap(),
            synth_subject(3, &g, &b).unwrap()
        );
        assert_ne!(
            synth_subject(3, &g, &b).unwrap().data(),
            synth_subject(4, &g, &b).unwrap().data()
        );
    }

    #[test]
    fn notch_depth_at_centre() {
        let p = SynthParams::from_seed(11);
        assert_eq!(p.notch_db(p.notch_hz, 0.0), -p.notch_depth_db);
        let with = p.gain_db(p.notch_hz, 0.0, 0.0, 0);
        let without = p.head_shadow_db(p.notch_hz, 0.0) + p.ripple_db(p.notch_hz, 0.0);
        assert!((without - with - p.notch_depth_db).abs() < 1e-12);
    }

    #[test]
    fn parameter_ranges() {
        for seed in 0..200 {
            let p = SynthParams::from_seed(seed);
            assert!((0.07..=0.10).contains(&p.head_radius_m));
            assert!((6000.0..=9000.0).contains(&p.notch_hz));
            assert!((8.0..=20.0).contains(&p.notch_depth_db));
            assert!((0.08..=0.15).contains(&p.notch_width_oct));
            assert!(p.ripple_db.iter().all(|c| (-1.5..=1.5).contains(c)));
        }
    }

    #[test]
    fn seed_seven_range_and_pbc() {
        let g = SphericalGrid::equiangular(4, 4).unwrap();
        let b = bins();
        assert_eq!(b.len(), 85);
        let s7 = synth_subject(7, &g, &b).unwrap();
        let hi = 10f64.powf(6.0 / 20.0);
        for &v in s7.data().iter() {
            assert!((v as f64) >= 1e-5 && (v as f64) <= hi, "{v}");
        }
        // oracle: direct evaluation of the generator formula
        let p = SynthParams::from_seed(7);
        for (loc, d) in g.directions().iter().enumerate() {
            for (k, &f) in b.iter().enumerate() {
                for ear in 0..2 {
                    let expected = 10f64.powf(
                        p.gain_db(f as f64, d.azimuth_deg as f64, d.elevation_deg as f64, ear)
                            / 20.0,
                    );
                    assert_eq!(s7.data()[[loc, k, ear]], expected as f32);
                }
            }
        }
        let s8 = synth_subject(8, &g, &b).unwrap();
        let t = LoudnessTables::new(&b.iter().map(|&f| f as f64).collect::<Vec<_>>());
        assert!(pbc(&s7, &s8, &t).unwrap() > 0.0);
    }

    #[test]
    fn head_shadow_only_on_far_ear() {
        let p = SynthParams::from_seed(1);
        // source at the left (azimuth 90): right ear shadowed, left ear not
        assert_eq!(p.head_shadow_db(8000.0, 90.0), 0.0);
        assert!(p.head_shadow_db(8000.0, -90.0) < 0.0);
    }
}
