use std::collections::HashSet;

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};

/// One measurement direction in degrees. Azimuth in [0, 360) increasing toward
/// the left ear; elevation in [-90, 90].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub azimuth_deg: f32,
    pub elevation_deg: f32,
}

impl Direction {
    pub fn new(azimuth_deg: f32, elevation_deg: f32) -> Self {
        Direction {
            azimuth_deg,
            elevation_deg,
        }
    }

    /// `(lateral_deg, polar_deg)` in the interaural-polar system.
    pub fn interaural(&self) -> (f64, f64) {
        super::interaural_coords(self.azimuth_deg as f64, self.elevation_deg as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    directions: Vec<Direction>,
}

impl SphericalGrid {
    pub fn new(directions: Vec<Direction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Invariant("empty grid".into()));
        }
        let mut seen = HashSet::with_capacity(directions.len());
        for (i, d) in directions.iter().enumerate() {
            let (az, el) = (d.azimuth_deg, d.elevation_deg);
            if !az.is_finite() || !el.is_finite() {
                return Err(Error::Invariant(format!("direction {i} is not finite")));
            }
            if !(0.0..360.0).contains(&az) {
                return Err(Error::Invariant(format!(
                    "direction {i}: azimuth {az} outside [0, 360)"
                )));
            }
            if !(-90.0..=90.0).contains(&el) {
                return Err(Error::Invariant(format!(
                    "direction {i}: elevation {el} outside [-90, 90]"
                )));
            }
            // +0.0 and -0.0 are the same direction
            let key = ((az + 0.0).to_bits(), (el + 0.0).to_bits());
            if !seen.insert(key) {
                return Err(Error::Invariant(format!(
                    "duplicate direction ({az}, {el})"
                )));
            }
        }
        Ok(SphericalGrid { directions })
    }

    /// `n_azimuth` equally spaced azimuths starting at 0, times `n_elevation`
    /// cell-centred elevations. Elevation is the outer index.
    pub fn equiangular(n_azimuth: usize, n_elevation: usize) -> Result<Self> {
        if n_azimuth == 0 || n_elevation == 0 {
            return Err(Error::Invariant("empty grid".into()));
        }
        let mut dirs = Vec::with_capacity(n_azimuth * n_elevation);
        for j in 0..n_elevation {
            let el = -90.0 + 180.0 * (j as f64 + 0.5) / n_elevation as f64;
            for i in 0..n_azimuth {
                let az = 360.0 * i as f64 / n_azimuth as f64;
                dirs.push(Direction::new(az as f32, el as f32));
            }
        }
        Self::new(dirs)
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Time-domain head-related impulse responses, `L x 2 x T` (location, ear, tap).
#[derive(Debug, Clone, PartialEq)]
pub struct HrirSet {
    subject_id: String,
    sample_rate_hz: f32,
    grid: SphericalGrid,
    data: Array3<f32>,
}

impl HrirSet {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f32,
        grid: SphericalGrid,
        data: Array3<f32>,
    ) -> Result<Self> {
        let set = HrirSet {
            subject_id: subject_id.into(),
            sample_rate_hz,
            grid,
            data,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Invariant(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            )));
        }
        let (l, ears, taps) = self.data.dim();
        if l != self.grid.len() || ears != 2 || taps == 0 {
            return Err(Error::ShapeMismatch(format!(
                "HRIR tensor {:?} does not match {} locations x 2 ears x T>=1",
                self.data.dim(),
                self.grid.len()
            )));
        }
        if let Some((idx, v)) = self.data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite sample {v} at {idx:?}"
            )));
        }
        Ok(())
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
    pub fn sample_rate_hz(&self) -> f32 {
        self.sample_rate_hz
    }
    pub fn grid(&self) -> &SphericalGrid {
        &self.grid
    }
    pub fn data(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }
    pub fn taps(&self) -> usize {
        self.data.dim().2
    }
}

/// Linear magnitude spectra, `L x K x 2` (location, bin, ear).
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSet {
    subject_id: String,
    grid: SphericalGrid,
    freq_bins_hz: Vec<f32>,
    data: Array3<f32>,
}

impl MagnitudeSet {
    pub fn new(
        subject_id: impl Into<String>,
        grid: SphericalGrid,
        freq_bins_hz: Vec<f32>,
        data: Array3<f32>,
    ) -> Result<Self> {
        let set = MagnitudeSet {
            subject_id: subject_id.into(),
            grid,
            freq_bins_hz,
            data,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds a set from `f64` magnitudes, rounding to the stored `f32` precision.
    pub fn from_f64(
        subject_id: impl Into<String>,
        grid: SphericalGrid,
        freq_bins_hz: Vec<f32>,
        data: &Array3<f64>,
    ) -> Result<Self> {
        Self::new(subject_id, grid, freq_bins_hz, data.mapv(|v| v as f32))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.freq_bins_hz.len();
        if k == 0 {
            return Err(Error::Invariant("no frequency bins".into()));
        }
        for w in self.freq_bins_hz.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Invariant(format!(
                    "frequency bins not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.freq_bins_hz.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Invariant(
                "frequency bins must be finite and >= 0".into(),
            ));
        }
        let (l, kk, ears) = self.data.dim();
        if l != self.grid.len() || kk != k || ears != 2 {
            return Err(Error::ShapeMismatch(format!(
                "magnitude tensor {:?} does not match {} locations x {} bins x 2 ears",
                self.data.dim(),
                self.grid.len(),
                k
            )));
        }
        for ((a, b, c), &v) in self.data.indexed_iter() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::NonPositiveMagnitude {
                    value: v as f64,
                    index: vec![a, b, c],
                });
            }
        }
        Ok(())
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
    pub fn grid(&self) -> &SphericalGrid {
        &self.grid
    }
    pub fn freq_bins_hz(&self) -> &[f32] {
        &self.freq_bins_hz
    }
    pub fn data(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }
    pub fn num_locations(&self) -> usize {
        self.grid.len()
    }
    pub fn num_bins(&self) -> usize {
        self.freq_bins_hz.len()
    }

    /// Magnitudes widened to `f64`.
    pub fn to_f64(&self) -> Array3<f64> {
        self.data.mapv(f64::from)
    }

    pub fn freq_bins_f64(&self) -> Vec<f64> {
        self.freq_bins_hz.iter().map(|&f| f as f64).collect()
    }

    /// Same subject, grid and bins with a different tensor.
    pub fn with_data(&self, data: Array3<f32>) -> Result<Self> {
        Self::new(
            self.subject_id.clone(),
            self.grid.clone(),
            self.freq_bins_hz.clone(),
            data,
        )
    }

    pub fn with_subject_id(mut self, id: impl Into<String>) -> Self {
        self.subject_id = id.into();
        self
    }

    /// Errors unless `other` shares this set's grid, bins and shape.
    pub fn check_compatible(&self, other: &MagnitudeSet) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch(format!(
                "grids differ between {} and {}",
                self.subject_id, other.subject_id
            )));
        }
        if self.freq_bins_hz != other.freq_bins_hz {
            return Err(Error::ShapeMismatch(format!(
                "frequency bins differ between {} and {}",
                self.subject_id, other.subject_id
            )));
        }
        Ok(())
    }
}

/// Either kind of set stored in an HTF file.
#[derive(Debug, Clone, PartialEq)]
pub enum HtfSet {
    Hrir(HrirSet),
    Magnitude(MagnitudeSet),
}

impl HtfSet {
    pub fn subject_id(&self) -> &str {
        match self {
            HtfSet::Hrir(h) => h.subject_id(),
            HtfSet::Magnitude(m) => m.subject_id(),
        }
    }

    pub fn into_magnitude(self) -> Result<MagnitudeSet> {
        match self {
            HtfSet::Magnitude(m) => Ok(m),
            HtfSet::Hrir(h) => Err(Error::Invariant(format!(
                "{} holds time-domain HRIRs, expected magnitudes",
                h.subject_id()
            ))),
        }
    }
}

impl From<HrirSet> for HtfSet {
    fn from(h: HrirSet) -> Self {
        HtfSet::Hrir(h)
    }
}

impl From<MagnitudeSet> for HtfSet {
    fn from(m: MagnitudeSet) -> Self {
        HtfSet::Magnitude(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_duplicates_and_ranges() {
        let d = |a, e| Direction::new(a, e);
        assert!(SphericalGrid::new(vec![]).is_err());
        assert!(SphericalGrid::new(vec![d(0.0, 0.0), d(0.0, 0.0)]).is_err());
        assert!(SphericalGrid::new(vec![d(360.0, 0.0)]).is_err());
        assert!(SphericalGrid::new(vec![d(0.0, 90.5)]).is_err());
        assert!(SphericalGrid::new(vec![d(f32::NAN, 0.0)]).is_err());
        assert!(SphericalGrid::new(vec![d(0.0, -90.0), d(359.5, 90.0)]).is_ok());
    }

    #[test]
    fn equiangular_desk_grid() {
        let g = SphericalGrid::equiangular(12, 6).unwrap();
        assert_eq!(g.len(), 72);
        assert_eq!(g.directions()[1], Direction::new(30.0, -75.0));
        assert_eq!(g.directions()[71], Direction::new(330.0, 75.0));
    }

    #[test]
    fn magnitude_set_rejects_zero() {
        let g = SphericalGrid::equiangular(2, 1).unwrap();
        let mut data = Array3::from_elem((2, 3, 2), 1.0f32);
        data[[1, 2, 0]] = 0.0;
        let err = MagnitudeSet::new("s", g, vec![1.0, 2.0, 3.0], data).unwrap_err();
        assert!(matches!(err, Error::NonPositiveMagnitude { .. }));
    }

    #[test]
    fn hrir_shape_checked() {
        let g = SphericalGrid::equiangular(2, 1).unwrap();
        assert!(HrirSet::new("s", 48000.0, g.clone(), Array3::zeros((2, 2, 0))).is_err());
        assert!(HrirSet::new("s", 48000.0, g.clone(), Array3::zeros((3, 2, 4))).is_err());
        assert!(HrirSet::new("s", 0.0, g.clone(), Array3::zeros((2, 2, 4))).is_err());
        assert!(HrirSet::new("s", 48000.0, g, Array3::zeros((2, 2, 4))).is_ok());
    }
}
