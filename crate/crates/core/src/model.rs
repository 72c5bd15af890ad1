//! Physical description of the opto-electromechanical system.
//!
//! All fields are stored in SI and angular units (rad/s). Rates are
//! amplitude decay rates for the optical mode: the intracavity energy decays
//! at `2 * gamma`, so the optical quality factor is `omega_laser / (2 * gamma)`.
//! The mechanical damping `gamma_m` is the energy damping rate, i.e. the
//! full width of the displacement spectrum in rad/s.
//!
//! Sign convention for the optomechanical coupling: the instantaneous
//! detuning is `delta_0 + sum_j g_j x_j`, so `g > 0` means positive
//! displacement raises the detuning.

use std::collections::HashSet;
use std::ops::Deref;

use crate::error::{Error, Result, Violation};
use crate::signal_chain::FeedbackChainConfig;
use crate::units::{HBAR, K_B};

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalMode {
    /// Intrinsic amplitude decay rate (rad/s).
    pub gamma_0: f64,
    /// Input (taper) coupling rate (rad/s).
    pub gamma_in: f64,
    /// Bare laser–cavity detuning (rad/s).
    pub delta_0: f64,
    /// Optical carrier angular frequency (rad/s).
    pub omega_laser: f64,
}

impl OpticalMode {
    pub fn gamma_total(&self) -> f64 {
        self.gamma_in + self.gamma_0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanicalMode {
    pub label: String,
    /// Effective mass (kg).
    pub mass: f64,
    /// Intrinsic energy damping rate Γ₀ (rad/s).
    pub gamma_m: f64,
    /// Resonance angular frequency (rad/s).
    pub omega_m: f64,
    /// Cavity frequency pull per displacement (rad/s per m).
    pub coupling_g: f64,
}

impl MechanicalMode {
    pub fn quality_factor(&self) -> f64 {
        self.omega_m / self.gamma_m
    }

    /// Static compliance coefficient ħg²/(mω²) entering the mean-field cubic.
    pub fn static_pull(&self) -> f64 {
        HBAR * self.coupling_g * self.coupling_g / (self.mass * self.omega_m * self.omega_m)
    }

    /// Thermal position variance k_B T/(m ω²).
    pub fn thermal_variance(&self, temperature: f64) -> f64 {
        K_B * temperature / (self.mass * self.omega_m * self.omega_m)
    }
}

/// Phase modulation of the laser used as a displacement calibration
/// reference; it enters the cavity as a detuning modulation
/// `depth * cos(omega * t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTone {
    /// Modulation angular frequency (rad/s).
    pub omega: f64,
    /// Peak detuning excursion (rad/s).
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    /// Input optical power (W).
    pub power: f64,
    pub reference_tone: Option<ReferenceTone>,
}

impl Drive {
    /// Input photon flux |a_in|² = P/(ħ ω_L), photons per second.
    pub fn photon_flux(&self, omega_laser: f64) -> f64 {
        self.power / (HBAR * omega_laser)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Bath temperature (K).
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub optical: OpticalMode,
    pub mechanics: Vec<MechanicalMode>,
    pub drive: Drive,
    pub environment: Environment,
    pub feedback: FeedbackChainConfig,
    pub rng_seed: u64,
    /// Mean-field branch used when the static problem is multistable.
    pub branch: Option<usize>,
}

/// A configuration whose invariants have been checked. Every analysis and
/// simulation entry point takes this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidConfig(SystemConfig);

impl Deref for ValidConfig {
    type Target = SystemConfig;
    fn deref(&self) -> &SystemConfig {
        &self.0
    }
}

impl ValidConfig {
    pub fn into_inner(self) -> SystemConfig {
        self.0
    }

    /// Apply a modification and re-validate.
    pub fn with(&self, edit: impl FnOnce(&mut SystemConfig)) -> Result<ValidConfig> {
        let mut raw = self.0.clone();
        edit(&mut raw);
        validate(raw)
    }

    pub fn mode(&self, label: &str) -> Result<(usize, &MechanicalMode)> {
        self.0
            .mechanics
            .iter()
            .enumerate()
            .find(|(_, m)| m.label == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    pub fn photon_flux(&self) -> f64 {
        self.0.drive.photon_flux(self.0.optical.omega_laser)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn check(&mut self, ok: bool, field: impl Into<String>, constraint: &'static str, value: impl ToString) {
        if !ok {
            self.out.push(Violation {
                field: field.into(),
                constraint,
                value: value.to_string(),
            });
        }
    }

    fn finite(&mut self, field: &str, value: f64) -> bool {
        self.check(value.is_finite(), field, "finite", value);
        value.is_finite()
    }
}

/// Check every invariant and report all violations at once.
pub fn validate(config: SystemConfig) -> Result<ValidConfig> {
    let mut c = Checker { out: Vec::new() };

    let o = &config.optical;
    if c.finite("optical.gamma_0", o.gamma_0) {
        c.check(o.gamma_0 > 0.0, "optical.gamma_0", "gamma_0 > 0", o.gamma_0);
    }
    if c.finite("optical.gamma_in", o.gamma_in) {
        c.check(o.gamma_in >= 0.0, "optical.gamma_in", "gamma_in >= 0", o.gamma_in);
    }
    c.finite("optical.delta_0", o.delta_0);
    if c.finite("optical.omega_laser", o.omega_laser) {
        c.check(o.omega_laser > 0.0, "optical.omega_laser", "omega_laser > 0", o.omega_laser);
    }
    let gamma = o.gamma_total();
    c.check(gamma > 0.0 || !gamma.is_finite(), "optical.gamma", "gamma_in + gamma_0 > 0", gamma);

    c.check(!config.mechanics.is_empty(), "mechanics", "at least one mechanical mode", 0);
    let mut seen = HashSet::new();
    for m in &config.mechanics {
        let p = |f: &str| format!("mode.{}.{}", m.label, f);
        c.check(!m.label.is_empty(), "mode.label", "non-empty label", "\"\"");
        c.check(seen.insert(m.label.clone()), p("label"), "unique label", &m.label);
        if c.finite(&p("mass"), m.mass) {
            c.check(m.mass > 0.0, p("mass"), "mass > 0", m.mass);
        }
        if c.finite(&p("gamma_m"), m.gamma_m) {
            c.check(m.gamma_m > 0.0, p("gamma_m"), "gamma_m > 0", m.gamma_m);
        }
        if c.finite(&p("omega_m"), m.omega_m) {
            c.check(m.omega_m > 0.0, p("omega_m"), "omega_m > 0", m.omega_m);
        }
        c.finite(&p("coupling_g"), m.coupling_g);
        if m.gamma_m > 0.0 && m.omega_m > 0.0 {
            let q = m.quality_factor();
            c.check(q > 1.0, p("quality_factor"), "omega_m / gamma_m > 1", q);
        }
    }

    let d = &config.drive;
    if c.finite("drive.power", d.power) {
        c.check(d.power >= 0.0, "drive.power", "power >= 0", d.power);
    }
    if let Some(t) = &d.reference_tone {
        if c.finite("reference.omega", t.omega) {
            c.check(t.omega > 0.0, "reference.omega", "omega > 0", t.omega);
        }
        if c.finite("reference.depth", t.depth) {
            c.check(t.depth >= 0.0, "reference.depth", "depth >= 0", t.depth);
        }
    }

    let t = config.environment.temperature;
    if c.finite("environment.temperature", t) {
        c.check(t >= 0.0, "environment.temperature", "temperature >= 0", t);
    }

    config.feedback.check_into(&mut c.out);

    if c.out.is_empty() {
        Ok(ValidConfig(config))
    } else {
        Err(Error::Validation(c.out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedRates {
    pub gamma_total: f64,
    pub photon_flux: f64,
    pub escape_efficiency: f64,
}

pub fn derived_rates(config: &ValidConfig) -> DerivedRates {
    let gamma_total = config.optical.gamma_total();
    DerivedRates {
        gamma_total,
        photon_flux: config.photon_flux(),
        escape_efficiency: config.optical.gamma_in / gamma_total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;
    use crate::units::{hz_to_angular, wavelength_to_angular};

    fn violations(cfg: SystemConfig) -> Vec<Violation> {
        match validate(cfg) {
            Err(Error::Validation(v)) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn zero_mass_is_named() {
        let mut cfg = defaults::paper_like().into_inner();
        cfg.mechanics[0].mass = 0.0;
        let v = violations(cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, "mass > 0");
        assert!(v[0].field.ends_with(".mass"));
        assert_eq!(v[0].value, "0");
    }

    #[test]
    fn all_violations_are_reported() {
        let mut cfg = defaults::paper_like().into_inner();
        cfg.mechanics[0].mass = -1.0;
        cfg.optical.gamma_0 = 0.0;
        cfg.drive.power = -3.0;
        cfg.mechanics[1].label = cfg.mechanics[0].label.clone();
        let v = violations(cfg);
        let constraints: Vec<_> = v.iter().map(|x| x.constraint).collect();
        assert!(constraints.contains(&"mass > 0"));
        assert!(constraints.contains(&"gamma_0 > 0"));
        assert!(constraints.contains(&"power >= 0"));
        assert!(constraints.contains(&"unique label"));
    }

    #[test]
    fn uncoupled_cavity_is_valid() {
        let mut cfg = defaults::paper_like().into_inner();
        cfg.optical.gamma_in = 0.0;
        assert!(validate(cfg).is_ok());
    }

    #[test]
    fn low_q_mode_rejected() {
        let mut cfg = defaults::paper_like().into_inner();
        cfg.mechanics[0].gamma_m = cfg.mechanics[0].omega_m;
        let v = violations(cfg);
        assert_eq!(v[0].constraint, "omega_m / gamma_m > 1");
    }

    #[test]
    fn paper_like_probe_parameters_validate() {
        let cfg = defaults::paper_like();
        let (_, probe) = cfg.mode(defaults::PROBE_LABEL).unwrap();
        assert!((probe.mass - 0.3e-9).abs() < 1e-24);
        assert_eq!(probe.gamma_m, hz_to_angular(90e3));
        assert_eq!(probe.omega_m, hz_to_angular(28.6e6));
        let q = cfg.optical.omega_laser / (2.0 * cfg.optical.gamma_0);
        assert!((q / 1e7 - 1.0).abs() < 1e-3, "intrinsic Q {q}");
        assert!((cfg.optical.omega_laser / wavelength_to_angular(780e-9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_is_idempotent() {
        let once = defaults::paper_like();
        let twice = validate(once.clone().into_inner()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn critical_coupling_rates() {
        let cfg = defaults::paper_like();
        let r = derived_rates(&cfg);
        assert_eq!(r.gamma_total, 2.0 * cfg.optical.gamma_0);
        assert_eq!(r.escape_efficiency, 0.5);
        let uncoupled = cfg.with(|c| c.optical.gamma_in = 0.0).unwrap();
        assert_eq!(derived_rates(&uncoupled).escape_efficiency, 0.0);
    }

    #[test]
    fn photon_flux_at_sixty_microwatts() {
        // Hand calculation: E_photon = h c / λ = 6.62607015e-34 * 299792458 / 780e-9
        //                           = 2.546_717e-19 J; 60e-6 / E = 2.355_97e14 s^-1.
        let e_photon: f64 = 6.626_070_15e-34 * 299_792_458.0 / 780e-9;
        let expected = 60e-6 / e_photon;
        assert!((expected / 2.355_97e14 - 1.0).abs() < 1e-5);
        let cfg = defaults::paper_like().with(|c| c.drive.power = 60e-6).unwrap();
        let flux = derived_rates(&cfg).photon_flux;
        // ħ is stored to ten significant figures, so 2πħ differs from h at 1e-9.
        assert!((flux / expected - 1.0).abs() < 1e-8, "{flux} vs {expected}");
    }
}
