//! Vertical-polar to interaural-polar conversion.
//!
//! Azimuth 0 is straight ahead and increases toward the left ear; elevation is
//! positive upward. Lateral angle is in [-90, 90] (positive = left). Polar angle
//! uses the (-90, 270] convention: 0 front, 90 above, 180 behind, 270 below.

/// Sine of a nonnegative angle in degrees. Reduction to the first quadrant is
/// exact, so supplementary angles give bit-identical values.
fn sin_nonneg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        return -sin_nonneg(r - 180.0);
    }
    let r = if r > 90.0 { 180.0 - r } else { r };
    if r == 0.0 {
        0.0
    } else if r == 90.0 {
        1.0
    } else {
        r.to_radians().sin()
    }
}

/// Sine of an angle in degrees, exact at multiples of 90 and odd in its argument.
pub(crate) fn sin_deg(deg: f64) -> f64 {
    if deg < 0.0 {
        -sin_nonneg(-deg)
    } else {
        sin_nonneg(deg)
    }
}

/// Cosine of an angle in degrees, exact at multiples of 90 and even in its argument.
pub(crate) fn cos_deg(deg: f64) -> f64 {
    let r = deg.abs().rem_euclid(360.0);
    let r = if r > 180.0 { 360.0 - r } else { r };
    if r > 90.0 {
        return -cos_deg(180.0 - r);
    }
    if r == 0.0 {
        1.0
    } else if r == 90.0 {
        0.0
    } else {
        r.to_radians().cos()
    }
}

/// Returns `(lateral_deg, polar_deg)` for a direction given in degrees.
pub fn interaural_coords(azimuth_deg: f64, elevation_deg: f64) -> (f64, f64) {
    let (st, ct) = (sin_deg(azimuth_deg), cos_deg(azimuth_deg));
    let (sp, cp) = (sin_deg(elevation_deg), cos_deg(elevation_deg));
    let lateral = (st * cp).clamp(-1.0, 1.0).asin().to_degrees();
    let mut polar = sp.atan2(ct * cp).to_degrees();
    if polar <= -90.0 {
        polar += 360.0;
    }
    (lateral, polar)
}

/// Circular difference `a - b` in degrees, wrapped to (-180, 180].
pub fn wrap_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontal_and_zenith() {
        assert_eq!(interaural_coords(0.0, 0.0), (0.0, 0.0));
        assert_eq!(interaural_coords(0.0, 90.0), (0.0, 90.0));
    }

    #[test]
    fn matches_high_precision_evaluation() {
        // mpmath, 40 digits
        let (lat, pol) = interaural_coords(30.0, 45.0);
        assert!((lat - 20.704_811_054_635_43).abs() < 1e-12);
        assert!((pol - 49.106_605_350_869_09).abs() < 1e-12);
    }

    #[test]
    fn median_plane_has_zero_lateral() {
        for el in -90..=90 {
            for az in [0.0, 180.0] {
                let (lat, _) = interaural_coords(az, el as f64);
                assert_eq!(lat, 0.0, "az {az} el {el}");
            }
        }
    }

    #[test]
    fn lateral_brute_force_grid() {
        for az in 0..360 {
            for el in -90..=90 {
                let (t, p) = ((az as f64).to_radians(), (el as f64).to_radians());
                let expected = (t.sin() * p.cos()).asin().to_degrees();
                let (lat, _) = interaural_coords(az as f64, el as f64);
                assert!((lat - expected).abs() < 1e-9, "az {az} el {el}");
                assert_eq!(lat, interaural_coords(az as f64, -(el as f64)).0);
            }
        }
    }

    #[test]
    fn polar_convention() {
        assert!((interaural_coords(180.0, 0.0).1 - 180.0).abs() < 1e-12);
        assert!((interaural_coords(180.0, -30.0).1 - 210.0).abs() < 1e-12);
        assert!((interaural_coords(0.0, -30.0).1 + 30.0).abs() < 1e-12);
        assert_eq!(interaural_coords(0.0, -90.0).1, 270.0);
        for az in (0..360).step_by(7) {
            for el in (-90..=90).step_by(5) {
                let (_, p) = interaural_coords(az as f64, el as f64);
                assert!(p > -90.0 && p <= 270.0);
            }
        }
    }

    #[test]
    fn wrapped_differences() {
        assert_eq!(wrap_angle_diff(10.0, 350.0), 20.0);
        assert_eq!(wrap_angle_diff(350.0, 10.0), -20.0);
        assert_eq!(wrap_angle_diff(180.0, 0.0), 180.0);
        assert_eq!(wrap_angle_diff(0.0, 180.0), 180.0);
        assert_eq!(wrap_angle_diff(-90.0, 270.0), 0.0);
    }
}
