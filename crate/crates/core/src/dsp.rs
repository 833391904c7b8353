//! HRIR to magnitude preprocessing and the spectral difference error.

use ndarray::{Array, Array3, ArrayBase, Data, Dimension};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{HrirSet, MagnitudeSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub fft_size: usize,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub magnitude_floor: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            fft_size: 256,
            f_low_hz: 200.0,
            f_high_hz: 16000.0,
            magnitude_floor: 1e-5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if !(self.f_low_hz >= 0.0 && self.f_low_hz < self.f_high_hz) {
            return Err(Error::Config(format!(
                "band [{}, {}] is empty",
                self.f_low_hz, self.f_high_hz
            )));
        }
        if self.f_high_hz > sample_rate_hz / 2.0 {
            return Err(Error::Config(format!(
                "f_high {} Hz exceeds Nyquist for fs = {} Hz",
                self.f_high_hz, sample_rate_hz
            )));
        }
        if !(self.magnitude_floor > 0.0) {
            return Err(Error::Config("magnitude_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Inclusive range of retained FFT bin indices. Each band edge snaps to its
/// nearest bin, so 48 kHz / 256 points / [200, 16000] Hz keeps bins 1..=85.
pub fn retained_bin_range(sample_rate_hz: f64, cfg: &PreprocessConfig) -> (usize, usize) {
    let spacing = sample_rate_hz / cfg.fft_size as f64;
    let lo = (cfg.f_low_hz / spacing).round() as usize;
    let hi = ((cfg.f_high_hz / spacing).round() as usize).min(cfg.fft_size / 2);
    (lo, hi)
}

/// Centre frequencies of the retained bins.
pub fn retained_bins(sample_rate_hz: f64, cfg: &PreprocessConfig) -> Vec<f64> {
    let spacing = sample_rate_hz / cfg.fft_size as f64;
    let (lo, hi) = retained_bin_range(sample_rate_hz, cfg);
    (lo..=hi).map(|k| k as f64 * spacing).collect()
}

/// Full complex spectrum of a zero-padded real signal.
pub fn spectrum(signal: &[f64], fft_size: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(fft_size)
        .collect();
    FftPlanner::new()
        .plan_fft_forward(fft_size)
        .process(&mut buf);
    buf
}

pub fn fft_magnitude(h: &HrirSet, cfg: &PreprocessConfig) -> Result<MagnitudeSet> {
    let fs = h.sample_rate_hz() as f64;
    cfg.validate(fs)?;
    if h.taps() > cfg.fft_size {
        return Err(Error::Config(format!(
            "{} taps exceed fft_size {}",
            h.taps(),
            cfg.fft_size
        )));
    }
    let (lo, hi) = retained_bin_range(fs, cfg);
    let bins: Vec<f32> = retained_bins(fs, cfg).iter().map(|&f| f as f32).collect();
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let data = h.data();
    let l = h.grid().len();
    let mut out = Array3::<f32>::zeros((l, hi - lo + 1, 2));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for loc in 0..l {
        for ear in 0..2 {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (t, &x) in data.slice(ndarray::s![loc, ear, ..]).iter().enumerate() {
                buf[t].re = x as f64;
            }
            fft.process(&mut buf);
            for k in lo..=hi {
                out[[loc, k - lo, ear]] = buf[k].norm().max(cfg.magnitude_floor) as f32;
            }
        }
    }
    MagnitudeSet::new(h.subject_id(), h.grid().clone(), bins, out)
}

/// Elementwise `20 log10(m)`.
pub fn to_db<S, D>(m: &ArrayBase<S, D>) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if let Some((idx, &v)) = m.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveMagnitude {
            value: v,
            index: idx.into_pattern_vec(),
        });
    }
    Ok(m.mapv(|v| 20.0 * v.log10()))
}

trait PatternVec {
    fn into_pattern_vec(self) -> Vec<usize>;
}

impl<P: ndarray::IntoDimension> PatternVec for P {
    fn into_pattern_vec(self) -> Vec<usize> {
        self.into_dimension().slice().to_vec()
    }
}

/// Median over bins of the direction-averaged absolute dB difference; the two
/// ears are averaged per bin before the median.
pub fn sde(reference: &MagnitudeSet, estimate: &MagnitudeSet) -> Result<f64> {
    reference.check_compatible(estimate)?;
    let a = to_db(&reference.to_f64())?;
    let b = to_db(&estimate.to_f64())?;
    Ok(sde_db(&a, &b))
}

/// SDE on dB tensors of shape `L x K x 2`.
pub fn sde_db(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let (l, k, _) = a.dim();
    let mut per_bin: Vec<f64> = (0..k)
        .map(|bin| {
            let mut ears = [0.0; 2];
            for (ear, acc) in ears.iter_mut().enumerate() {
                for loc in 0..l {
                    *acc += (a[[loc, bin, ear]] - b[[loc, bin, ear]]).abs();
                }
                *acc /= l as f64;
            }
            0.5 * (ears[0] + ears[1])
        })
        .collect();
    median(&mut per_bin)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Equivalent rectangular bandwidth in Hz (Glasberg and Moore).
pub fn erb_bandwidth(f_hz: f64) -> f64 {
    24.7 * (4.37 * f_hz / 1000.0 + 1.0)
}
