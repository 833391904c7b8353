//! Small statistics helpers shared by MMDS diagnostics and evaluation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_pop(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Pearson correlation with population moments.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "pearson over series of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateSeries(format!(
            "need at least 2 values, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let (cov, va, vb) = (cov / n, va / n, vb / n);
    // relative threshold: a constant series can pick up rounding noise in its centring
    let scale_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if va.sqrt() <= 1e-14 * scale_a || vb.sqrt() <= 1e-14 * scale_b || va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    pub p_two_sided: f64,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "paired t-test over {} and {} values",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let (t, p) = if se == 0.0 {
        if m == 0.0 {
            (0.0, 1.0)
        } else {
            (m.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = m / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Ok(PairedTTest {
        n,
        mean_difference: m,
        t,
        p_two_sided: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&a, &a).unwrap(), 1.0);
        assert_eq!(pearson(&a, &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        // mpmath: 0.98198050606196571569...
        assert!((pearson(&a, &[1.0, 2.0, 4.0]).unwrap() - 0.981_980_506_061_965_7).abs() < 1e-15);
        assert!(matches!(
            pearson(&a, &[2.0, 2.0, 2.0]),
            Err(Error::DegenerateSeries(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let a = [0.3, -1.2, 4.4, 2.0, 0.0];
        let b = [1.0, 0.5, 3.3, -0.7, 2.2];
        let base = pearson(&a, &b).unwrap();
        for (c, d) in [(2.0, 1.0), (0.001, -50.0), (1e3, 7.0)] {
            let bt: Vec<f64> = b.iter().map(|v| c * v + d).collect();
            assert!((pearson(&a, &bt).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn t_test_reference_value() {
        // scipy.stats.ttest_rel([1,2,3,4,5],[1.5,2.1,2.2,3.0,4.1]) -> t = 1.38923652347680..., p = 0.23709836568213...
        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.5, 2.1, 2.2, 3.0, 4.1]).unwrap();
        assert!((r.t - 1.389_236_523_476_807_4).abs() < 1e-9, "{}", r.t);
        assert!(
            (r.p_two_sided - 0.237_098_365_682_133_24).abs() < 1e-6,
            "{}",
            r.p_two_sided
        );
    }
}
