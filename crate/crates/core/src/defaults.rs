//! A configuration modelled on a silica microtoroid with two mechanical
//! modes: a 28.6 MHz probe mode and a 14 MHz mode that goes unstable first.
//!
//! Three parameters are not measured values but calibration choices:
//! the two optomechanical couplings and the 14 MHz damping. The 14 MHz
//! coupling is set so that mode crosses threshold at 60 µW; the probe
//! coupling is set so the shot-noise-limited probe sensitivity at 160 µW
//! comes out near 1.9e-18 m/√Hz. The 14 MHz damping trades equipartition
//! statistics against how much thermal motion leaks through the feedback.

use crate::model::{validate, Drive, Environment, MechanicalMode, OpticalMode, SystemConfig, ValidConfig};
use crate::signal_chain::FeedbackChainConfig;
use crate::units::{hz_to_angular, wavelength_to_angular};

pub const PROBE_LABEL: &str = "probe";
pub const UNSTABLE_LABEL: &str = "crown14";

pub const WAVELENGTH_M: f64 = 780e-9;
pub const INTRINSIC_Q: f64 = 1e7;
/// Threshold power the 14 MHz coupling is calibrated to (W).
pub const TARGET_THRESHOLD_W: f64 = 60e-6;
/// Operating power for suppression runs (W).
pub const SUPPRESSION_POWER_W: f64 = 160e-6;

/// g/2π in Hz per metre.
const PROBE_G_HZ_PER_M: f64 = 1.3439e18;
const UNSTABLE_G_HZ_PER_M: f64 = 4.0389e18;
const UNSTABLE_DAMPING_HZ: f64 = 300.0;

pub fn paper_like() -> ValidConfig {
    let omega_laser = wavelength_to_angular(WAVELENGTH_M);
    let gamma_0 = omega_laser / (2.0 * INTRINSIC_Q);
    let gamma_in = gamma_0;
    let raw = SystemConfig {
        optical: OpticalMode {
            gamma_0,
            gamma_in,
            delta_0: gamma_0 + gamma_in,
            omega_laser,
        },
        mechanics: vec![
            MechanicalMode {
                label: PROBE_LABEL.into(),
                mass: 0.3e-9,
                gamma_m: hz_to_angular(90e3),
                omega_m: hz_to_angular(28.6e6),
                coupling_g: hz_to_angular(PROBE_G_HZ_PER_M),
            },
            MechanicalMode {
                label: UNSTABLE_LABEL.into(),
                mass: 0.3e-9,
                gamma_m: hz_to_angular(UNSTABLE_DAMPING_HZ),
                omega_m: hz_to_angular(14e6),
                coupling_g: hz_to_angular(UNSTABLE_G_HZ_PER_M),
            },
        ],
        drive: Drive { power: SUPPRESSION_POWER_W, reference_tone: None },
        environment: Environment { temperature: 300.0 },
        feedback: FeedbackChainConfig::default(),
        rng_seed: 1,
        branch: None,
    };
    validate(raw).expect("built-in configuration is valid")
}
