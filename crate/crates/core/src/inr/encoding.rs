use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{cos_deg, sin_deg, SphericalGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosEncoding {
    pub num_octaves: usize,
}

impl Default for PosEncoding {
    fn default() -> Self {
        PosEncoding { num_octaves: 4 }
    }
}

impl PosEncoding {
    pub fn len(&self) -> usize {
        4 * self.num_octaves
    }

    pub fn is_empty(&self) -> bool {
        self.num_octaves == 0
    }
}

/// Sinusoidal features `[sin 2^m az, cos 2^m az, sin 2^m el, cos 2^m el]` for
/// each octave `m`. Evaluated in degrees so multiples of 90 are exact.
pub fn encode_direction(azimuth_deg: f64, elevation_deg: f64, enc: PosEncoding) -> Vec<f64> {
    let mut out = Vec::with_capacity(enc.len());
    for m in 0..enc.num_octaves {
        let s = 2f64.powi(m as i32);
        let (a, e) = (s * azimuth_deg, s * elevation_deg);
        out.extend_from_slice(&[sin_deg(a), cos_deg(a), sin_deg(e), cos_deg(e)]);
    }
    out
}

/// One encoded row per grid direction.
pub fn encode_grid(grid: &SphericalGrid, enc: PosEncoding) -> Array2<f64> {
    let mut out = Array2::zeros((grid.len(), enc.len()));
    for (row, d) in grid.directions().iter().enumerate() {
        let f = encode_direction(d.azimuth_deg as f64, d.elevation_deg as f64, enc);
        for (c, v) in f.into_iter().enumerate() {
            out[[row, c]] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_octave_examples() {
        let e = PosEncoding { num_octaves: 1 };
        assert_eq!(encode_direction(0.0, 0.0, e), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(encode_direction(90.0, 0.0, e), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn four_octaves_bounded() {
        let e = PosEncoding::default();
        for (az, el) in [(13.0, -41.0), (359.5, 89.0), (200.0, 3.3)] {
            let f = encode_direction(az, el, e);
            assert_eq!(f.len(), 16);
            assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
            for m in 0..4 {
                let s = 2f64.powi(m);
                let r = (s * az).to_radians();
                assert!((f[4 * m as usize] - r.sin()).abs() < 1e-12);
                assert!((f[4 * m as usize + 3] - (s * el).to_radians().cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_octaves_empty() {
        assert!(encode_direction(10.0, 10.0, PosEncoding { num_octaves: 0 }).is_empty());
    }
}
