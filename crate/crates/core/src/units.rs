//! Physical constants and the single Hz ↔ rad/s conversion point.
//!
//! Configuration files carry ordinary frequencies; everything downstream of
//! ingestion works in angular units.

use std::f64::consts::TAU;

/// Reduced Planck constant (J·s), CODATA 2018 exact.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K), CODATA 2018 exact.
pub const K_B: f64 = 1.380_649e-23;
/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;

/// Ordinary frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn hz_to_angular(value_hz: f64) -> f64 {
    value_hz * TAU
}

/// Angular frequency (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn angular_to_hz(value_rad_s: f64) -> f64 {
    value_rad_s / TAU
}

/// Optical carrier angular frequency for a vacuum wavelength in meters.
pub fn wavelength_to_angular(wavelength_m: f64) -> f64 {
    TAU * C_LIGHT / wavelength_m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_mode_frequency() {
        assert_eq!(hz_to_angular(28.6e6), TAU * 28.6e6);
        assert_eq!(hz_to_angular(0.0), 0.0);
        assert_eq!(angular_to_hz(0.0), 0.0);
    }

    #[test]
    fn round_trip_is_identity_to_an_ulp() {
        for &f in &[1.0, 28.6e6, 14e6, 90e3, 3.7e-3, 1.234_567e12] {
            let back = angular_to_hz(hz_to_angular(f));
            assert!((back - f).abs() <= 2.0 * f64::EPSILON * f, "{f} -> {back}");
        }
    }
}
