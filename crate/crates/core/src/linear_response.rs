//! Linearized loop algebra around a mean-field operating point.
//!
//! Conventions: fluctuations are expanded as `δx(t) = ∫ δx(ω) e^{iωt}`, so
//! `d/dt → iω`, and a complex pole `ω_p` of the susceptibility describes
//! motion `e^{iω_p t}` with energy damping rate `2 Im ω_p`.
//!
//! Every quantity is built by composing the same three pieces: the cavity
//! field response to displacement, its conjugate, and the transmitted-field
//! photodetection. The closed forms
//!
//! ```text
//! D(ω)    = γ² + Δ² − ω² + 2iγω
//! Σ_rp    = 2ħ g² n̄ Δ / D
//! T(ω)    = 2 g n̄ Δ (2γ₀ + iω) / D
//! G_crit  = ħ g / (2γ₀ + iω)
//! ```
//!
//! are used only as test oracles.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{MechanicalMode, ValidConfig};
use crate::response::{FrequencyResponse, ResponseKind};
use crate::signal_chain::{tune_to_critical, ChainDesign, FeedbackChainConfig};
use crate::steady_state::{operating_point, transmitted_mean_field, SteadyState};
use crate::units::HBAR;

/// Upper end of the threshold search (W).
pub const POWER_CEILING: f64 = 10e-3;
const THRESHOLD_ITERATIONS: usize = 60;
const THRESHOLD_RTOL: f64 = 1e-4;
/// |Σ χ₀| above which the perturbative extraction is replaced by a pole search.
pub const PERTURBATIVE_LIMIT: f64 = 0.1;

/// Feedback gain G(ω) mapping photocurrent fluctuation to force (N·s).
#[derive(Debug, Clone)]
pub enum Gain {
    Zero,
    Constant(Complex64),
    /// ħ g / (2γ₀ + iω) for a mode with coupling `coupling_g`.
    Critical { coupling_g: f64, gamma_0: f64 },
    Chain(ChainDesign),
}

impl Gain {
    pub fn critical_for(config: &ValidConfig, mode: &MechanicalMode) -> Gain {
        Gain::Critical { coupling_g: mode.coupling_g, gamma_0: config.optical.gamma_0 }
    }

    pub fn at(&self, omega: Complex64) -> Complex64 {
        match self {
            Gain::Zero => Complex64::new(0.0, 0.0),
            Gain::Constant(g) => *g,
            Gain::Critical { coupling_g, gamma_0 } => {
                HBAR * coupling_g / (2.0 * gamma_0 + Complex64::i() * omega)
            }
            Gain::Chain(d) => d.response_at(omega),
        }
    }
}

/// Coefficients of `δa(ω) = input · δa_in(ω) + displacement · δx(ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldResponse {
    pub input: Complex64,
    pub displacement: Complex64,
}

pub fn field_response(config: &ValidConfig, state: &SteadyState, mode: &MechanicalMode, omega: Complex64) -> FieldResponse {
    let gamma = config.optical.gamma_total();
    let denom = gamma - Complex64::i() * (state.delta_eff - omega);
    FieldResponse {
        input: (2.0 * config.optical.gamma_in).sqrt() / denom,
        displacement: Complex64::i() * mode.coupling_g * state.a_bar / denom,
    }
}

/// δa†(ω) per δx: the conjugate of the field response at −ω*.
fn conjugate_displacement(config: &ValidConfig, state: &SteadyState, mode: &MechanicalMode, omega: Complex64) -> Complex64 {
    field_response(config, state, mode, -omega.conj()).displacement.conj()
}

/// δn(ω) per δx(ω).
fn photon_number_response(config: &ValidConfig, state: &SteadyState, mode: &MechanicalMode, omega: Complex64) -> Complex64 {
    let c = field_response(config, state, mode, omega).displacement;
    let cd = conjugate_displacement(config, state, mode, omega);
    state.a_bar.conj() * c + state.a_bar * cd
}

/// δi(ω) per δx(ω), from `δi = ā_out* δa_out + ā_out δa_out†` with
/// `δa_out = −√(2γ_in) δa` for the displacement-driven part.
pub fn transduction_at(config: &ValidConfig, state: &SteadyState, mode: &MechanicalMode, omega: Complex64) -> Complex64 {
    let out = transmitted_mean_field(state, config).a_out;
    let k = (2.0 * config.optical.gamma_in).sqrt();
    let c = field_response(config, state, mode, omega).displacement;
    let cd = conjugate_displacement(config, state, mode, omega);
    -k * (out.conj() * c + out * cd)
}

/// Self-energy Σ(ω, G): the correction to χ₀⁻¹ from radiation pressure and
/// the feedback force `G δi` applied to this mode.
pub fn self_energy(config: &ValidConfig, state: &SteadyState, mode: &MechanicalMode, gain: &Gain, omega: Complex64) -> Complex64 {
    let radiation = -HBAR * mode.coupling_g * photon_number_response(config, state, mode, omega);
    radiation - gain.at(omega) * transduction_at(config, state, mode, omega)
}

fn bare_inverse(mode: &MechanicalMode, omega: Complex64) -> Complex64 {
    mode.mass * (mode.omega_m * mode.omega_m - omega * omega + Complex64::i() * mode.gamma_m * omega)
}

pub fn bare_susceptibility(mode: &MechanicalMode, omega_grid: &[f64]) -> Result<FrequencyResponse> {
    FrequencyResponse::from_fn(omega_grid, ResponseKind::Susceptibility, |w| {
        1.0 / bare_inverse(mode, Complex64::new(w, 0.0))
    })
}

pub fn transduction_transfer(
    config: &ValidConfig,
    state: &SteadyState,
    mode: &MechanicalMode,
    omega_grid: &[f64],
) -> Result<FrequencyResponse> {
    FrequencyResponse::from_fn(omega_grid, ResponseKind::Transduction, |w| {
        transduction_at(config, state, mode, Complex64::new(w, 0.0))
    })
}

pub fn modified_susceptibility(
    config: &ValidConfig,
    state: &SteadyState,
    mode: &MechanicalMode,
    gain: &Gain,
    omega_grid: &[f64],
) -> Result<FrequencyResponse> {
    let mut values = Vec::with_capacity(omega_grid.len());
    for &w in omega_grid {
        let wc = Complex64::new(w, 0.0);
        let inv = bare_inverse(mode, wc) + self_energy(config, state, mode, gain, wc);
        if inv.norm() == 0.0 || !inv.norm().is_finite() {
            return Err(Error::SingularResponse { omega: w });
        }
        values.push(1.0 / inv);
    }
    FrequencyResponse::new(omega_grid.to_vec(), values, ResponseKind::Susceptibility)
}

/// Gain that nulls Σ(ω, G), obtained as −Σ_rp / T at the configured
/// operating point. Where the operating point carries no transduction
/// (Δ = 0, no light or no coupling) the ratio is evaluated at a nominal
/// blue-detuned point instead; it does not depend on Δ, n̄ or γ_in.
pub fn critical_gain(config: &ValidConfig, mode: &MechanicalMode, omega_grid: &[f64]) -> Result<FrequencyResponse> {
    let usable = |s: &SteadyState, c: &ValidConfig| s.delta_eff != 0.0 && s.n_bar > 0.0 && c.optical.gamma_in > 0.0;
    let (cfg, state) = match operating_point(config) {
        Ok(s) if usable(&s, config) => (config.clone(), s),
        _ => {
            let nominal = config.with(|c| {
                c.drive.power = 1e-6;
                if c.optical.gamma_in == 0.0 {
                    c.optical.gamma_in = c.optical.gamma_0;
                }
                c.optical.delta_0 = c.optical.gamma_total();
                c.branch = None;
            })?;
            let s = operating_point(&nominal)?;
            (nominal, s)
        }
    };
    FrequencyResponse::from_fn(omega_grid, ResponseKind::Gain, |w| {
        operational_critical(&cfg, &state, mode, Complex64::new(w, 0.0))
    })
}

/// The configured chain retuned so its response at the resonance of
/// `mode_label` equals the operational critical gain, for a loop clocked
/// every `dt`. The result is enabled.
pub fn critical_chain(config: &ValidConfig, mode_label: &str, dt: f64) -> Result<FeedbackChainConfig> {
    let (_, mode) = config.mode(mode_label)?;
    let target = critical_gain(config, mode, &[mode.omega_m])?.values()[0];
    tune_to_critical(&config.feedback, dt, target, mode.omega_m)
}

fn operational_critical(config: &ValidConfig, state: &SteadyState, mode: &MechanicalMode, omega: Complex64) -> Complex64 {
    if mode.coupling_g == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let radiation = -HBAR * mode.coupling_g * photon_number_response(config, state, mode, omega);
    radiation / transduction_at(config, state, mode, omega)
}

/// The closed form as usually printed, ħg/(2γ₀ − iω). It is the complex
/// conjugate of the operational gain for real ω.
pub fn printed_critical_gain(config: &ValidConfig, mode: &MechanicalMode, omega: f64) -> Complex64 {
    HBAR * mode.coupling_g / Complex64::new(2.0 * config.optical.gamma_0, -omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extraction {
    Perturbative,
    PoleSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveModeParams {
    pub mode_label: String,
    /// Effective energy damping rate (rad/s); negative means unstable.
    pub gamma_eff: f64,
    /// Effective resonance frequency (rad/s).
    pub omega_eff: f64,
    pub is_unstable: bool,
    pub method: Extraction,
}

impl EffectiveModeParams {
    /// Exponential growth rate of the oscillation amplitude (s⁻¹).
    pub fn amplitude_growth_rate(&self) -> f64 {
        -self.gamma_eff / 2.0
    }
}

/// Complex root of χ⁻¹(ω) = 0 near `start`, by Newton iteration with a
/// numerical derivative.
pub fn find_pole(
    config: &ValidConfig,
    state: &SteadyState,
    mode: &MechanicalMode,
    gain: &Gain,
    start: Complex64,
) -> Result<Complex64> {
    let f = |w: Complex64| bare_inverse(mode, w) + self_energy(config, state, mode, gain, w);
    let h = 1e-6 * mode.gamma_m.max(1e-9 * mode.omega_m);
    let mut w = start;
    for _ in 0..100 {
        let fw = f(w);
        let deriv = (f(w + h) - f(w - h)) / (2.0 * h);
        let step = fw / deriv;
        if !step.re.is_finite() || !step.im.is_finite() {
            break;
        }
        w -= step;
        if step.norm() <= 1e-13 * mode.omega_m {
            return Ok(w);
        }
    }
    Err(Error::PoleSearch { omega: w.re })
}

pub fn effective_params(
    config: &ValidConfig,
    state: &SteadyState,
    gain: &Gain,
    mode_label: &str,
) -> Result<EffectiveModeParams> {
    let (_, mode) = config.mode(mode_label)?;
    let wm = Complex64::new(mode.omega_m, 0.0);
    let sigma = self_energy(config, state, mode, gain, wm);
    let chi0 = 1.0 / bare_inverse(mode, wm);
    let mass_w = mode.mass * mode.omega_m;
    let (gamma_eff, omega_eff, method) = if (sigma * chi0).norm() <= PERTURBATIVE_LIMIT {
        (mode.gamma_m + sigma.im / mass_w, mode.omega_m + sigma.re / (2.0 * mass_w), Extraction::Perturbative)
    } else {
        log::debug!("|Σχ₀| = {:.3} for mode {}; using pole search", (sigma * chi0).norm(), mode.label);
        let start = Complex64::new(
            mode.omega_m + sigma.re / (2.0 * mass_w),
            (mode.gamma_m + sigma.im / mass_w) / 2.0,
        );
        let pole = find_pole(config, state, mode, gain, start)?;
        (2.0 * pole.im, pole.re, Extraction::PoleSearch)
    };
    Ok(EffectiveModeParams {
        mode_label: mode.label.clone(),
        gamma_eff,
        omega_eff,
        is_unstable: gamma_eff < 0.0,
        method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    /// Best estimate of the threshold power (W).
    pub power: f64,
    /// Final bisection bracket (stable, unstable) in W.
    pub bracket: (f64, f64),
}

/// Drive power at which `gamma_eff` of the named mode crosses zero.
pub fn instability_threshold(config: &ValidConfig, mode_label: &str, gain: &Gain) -> Result<Threshold> {
    instability_threshold_below(config, mode_label, gain, POWER_CEILING)
}

pub fn instability_threshold_below(
    config: &ValidConfig,
    mode_label: &str,
    gain: &Gain,
    ceiling: f64,
) -> Result<Threshold> {
    let gamma_at = |p: f64| -> Result<f64> {
        let cfg = config.with(|c| c.drive.power = p)?;
        let state = operating_point(&cfg)?;
        Ok(effective_params(&cfg, &state, gain, mode_label)?.gamma_eff)
    };
    if gamma_at(ceiling)? >= 0.0 {
        return Err(Error::NoThreshold { ceiling_w: ceiling });
    }
    let (mut lo, mut hi) = (0.0, ceiling);
    for _ in 0..THRESHOLD_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if gamma_at(mid)? < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= THRESHOLD_RTOL * hi {
            break;
        }
    }
    Ok(Threshold { power: 0.5 * (lo + hi), bracket: (lo, hi) })
}
