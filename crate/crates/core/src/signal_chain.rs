//! Detection and the electrical feedback path.
//!
//! The photocurrent is sampled once per integration step, pushed through a
//! delay line, a cascade of two-pole resonators, a phase network and a gain
//! stage, and the resulting force is held constant over the next step. All
//! frequency responses here therefore include the zero-order-hold factor
//! `(1 - e^{-iωdt}) / (iωdt)`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result, Violation};
use crate::model::ValidConfig;
use crate::response::{FrequencyResponse, ResponseKind};

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackChainConfig {
    /// Bandpass center (rad/s).
    pub center_freq: f64,
    /// −3 dB full width of a single section (rad/s).
    pub bandwidth: f64,
    pub sections: usize,
    /// Total chain phase at `center_freq` (degrees).
    pub phase_deg: f64,
    /// |G| at `center_freq` (N·s).
    pub gain_mag: f64,
    pub enabled: bool,
    pub delay_samples: usize,
    /// Largest gain the actuator can deliver (N·s).
    pub gain_ceiling: f64,
}

impl Default for FeedbackChainConfig {
    fn default() -> Self {
        FeedbackChainConfig {
            center_freq: 2.0 * PI * 14e6,
            bandwidth: 2.0 * PI * 1.5e6,
            sections: 2,
            phase_deg: 0.0,
            gain_mag: 0.0,
            enabled: false,
            delay_samples: 1,
            gain_ceiling: 1e-18,
        }
    }
}

impl FeedbackChainConfig {
    pub fn check_into(&self, out: &mut Vec<Violation>) {
        let mut check = |ok: bool, field: &str, constraint: &'static str, value: String| {
            if !ok {
                out.push(Violation { field: format!("feedback.{field}"), constraint, value });
            }
        };
        let c = self.center_freq;
        check(c.is_finite() && c > 0.0, "center_freq", "center_freq > 0", c.to_string());
        let b = self.bandwidth;
        check(b.is_finite() && b > 0.0, "bandwidth", "bandwidth > 0", b.to_string());
        check(self.sections >= 1, "sections", "sections >= 1", self.sections.to_string());
        let g = self.gain_mag;
        check(g.is_finite() && g >= 0.0, "gain_mag", "gain_mag >= 0", g.to_string());
        check(self.phase_deg.is_finite(), "phase_deg", "finite", self.phase_deg.to_string());
        check(self.delay_samples >= 1, "delay_samples", "delay_samples >= 1", self.delay_samples.to_string());
        let ceil = self.gain_ceiling;
        check(ceil.is_finite() && ceil > 0.0, "gain_ceiling", "gain_ceiling > 0", ceil.to_string());
    }

    fn is_active(&self) -> bool {
        self.enabled && self.gain_mag > 0.0
    }
}

/// Zero-order-hold response of a sample held for `dt`.
pub fn zoh(omega: f64, dt: f64) -> Complex64 {
    zoh_at(Complex64::new(omega, 0.0), dt)
}

fn zoh_at(omega: Complex64, dt: f64) -> Complex64 {
    let ix = Complex64::i() * omega * dt;
    if ix.norm() < 1e-6 {
        return 1.0 - ix / 2.0 + ix * ix / 6.0;
    }
    (1.0 - (-ix).exp()) / ix
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
}

impl Resonator {
    /// H(z) = b0 (1 − z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)
    fn response(&self, zinv: Complex64) -> Complex64 {
        let z2 = zinv * zinv;
        self.b0 * (1.0 - z2) / (1.0 + self.a1 * zinv + self.a2 * z2)
    }
}

/// Filter coefficients for one chain at one sample interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDesign {
    dt: f64,
    delay: usize,
    resonators: Vec<Resonator>,
    /// Coefficients of the two first-order allpass sections.
    allpass: [f64; 2],
    /// Signed overall gain, including cascade normalization.
    scale: f64,
    active: bool,
}

fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Allpass coefficient giving phase `psi` (≤ 0) at digital frequency `theta`
/// for A(z) = (c + z⁻¹) / (1 + c z⁻¹).
fn allpass_coefficient(psi: f64, theta: f64) -> f64 {
    -((psi + theta) / 2.0).sin() / ((psi - theta) / 2.0).sin()
}

fn allpass_response(c: f64, zinv: Complex64) -> Complex64 {
    (c + zinv) / (1.0 + c * zinv)
}

impl ChainDesign {
    pub fn new(config: &FeedbackChainConfig, dt: f64) -> Result<ChainDesign> {
        let theta = config.center_freq * dt;
        if !(theta > 0.0 && theta < PI) {
            return Err(Error::Plan(format!(
                "feedback center {:e} rad/s is above the Nyquist frequency for dt = {dt:e} s",
                config.center_freq
            )));
        }
        let r = (-config.bandwidth * dt / 2.0).exp();
        let proto = Resonator { b0: 1.0, a1: -2.0 * r * theta.cos(), a2: r * r };
        let zc = Complex64::from_polar(1.0, -theta);
        let h = proto.response(zc);
        let b0 = 1.0 / h.norm();
        let resonators = vec![Resonator { b0, ..proto }; config.sections];

        let cascade = resonators.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(zc));
        let rest = cascade * zc.powi(config.delay_samples as i32) * zoh(config.center_freq, dt);

        // Lag to be supplied by the phase network, split evenly over two
        // sections; the sign inversion is chosen to keep the total lag near
        // −π so that each section stays well inside (−π, 0).
        let psi = wrap_pi(config.phase_deg.to_radians() - rest.arg());
        let lag_pos = if psi > 0.0 { psi - 2.0 * PI } else { psi };
        let lag_neg = wrap_pi(psi - PI);
        let lag_neg = if lag_neg > 0.0 { lag_neg - 2.0 * PI } else { lag_neg };
        let (sign, lag) = if (lag_pos + PI).abs() <= (lag_neg + PI).abs() {
            (1.0, lag_pos)
        } else {
            (-1.0, lag_neg)
        };
        let c = allpass_coefficient(lag / 2.0, theta);

        Ok(ChainDesign {
            dt,
            delay: config.delay_samples,
            resonators,
            allpass: [c, c],
            scale: sign * config.gain_mag / rest.norm(),
            active: config.is_active(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Continuous-frequency response of the sampled chain followed by the
    /// hold, in N·s.
    pub fn response(&self, omega: f64) -> Complex64 {
        self.response_at(Complex64::new(omega, 0.0))
    }

    /// Analytic continuation of [`ChainDesign::response`] to complex
    /// frequency, used by pole searches.
    pub fn response_at(&self, omega: Complex64) -> Complex64 {
        if !self.active {
            return Complex64::new(0.0, 0.0);
        }
        let zinv = (-Complex64::i() * omega * self.dt).exp();
        let mut h = self.scale * zinv.powi(self.delay as i32) * zoh_at(omega, self.dt);
        for s in &self.resonators {
            h *= s.response(zinv);
        }
        for &c in &self.allpass {
            h *= allpass_response(c, zinv);
        }
        h
    }

    /// Magnitudes of all filter poles.
    pub fn pole_radii(&self) -> Vec<f64> {
        let mut radii: Vec<f64> = self.resonators.iter().map(|s| s.a2.sqrt()).collect();
        radii.extend(self.allpass.iter().map(|c| c.abs()));
        radii
    }
}

/// Running state of one feedback chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    design: ChainDesign,
    delay_line: VecDeque<f64>,
    /// Direct-form-I history (x₁, x₂, y₁, y₂) per resonator.
    sections: Vec<[f64; 4]>,
    /// (x₁, y₁) per allpass section.
    phase: [[f64; 2]; 2],
}

impl ChainState {
    pub fn new(config: &FeedbackChainConfig, dt: f64) -> Result<ChainState> {
        let design = ChainDesign::new(config, dt)?;
        Ok(ChainState {
            delay_line: VecDeque::from(vec![0.0; design.delay]),
            sections: vec![[0.0; 4]; design.resonators.len()],
            phase: [[0.0; 2]; 2],
            design,
        })
    }

    pub fn design(&self) -> &ChainDesign {
        &self.design
    }

    pub fn reset(&mut self) {
        self.delay_line.iter_mut().for_each(|v| *v = 0.0);
        self.sections.iter_mut().for_each(|s| *s = [0.0; 4]);
        self.phase = [[0.0; 2]; 2];
    }

    /// Feed one photocurrent fluctuation sample (s⁻¹) and return the force
    /// (N) to hold over the following step.
    pub fn process_sample(&mut self, i_fluctuation: f64) -> f64 {
        if !self.design.active {
            return 0.0;
        }
        self.delay_line.push_back(i_fluctuation);
        let mut x = self.delay_line.pop_front().unwrap_or(0.0);
        for (s, st) in self.design.resonators.iter().zip(&mut self.sections) {
            let y = s.b0 * (x - st[1]) - s.a1 * st[2] - s.a2 * st[3];
            *st = [x, st[0], y, st[2]];
            x = y;
        }
        for (&c, st) in self.design.allpass.iter().zip(&mut self.phase) {
            let y = c * x + st[0] - c * st[1];
            *st = [x, y];
            x = y;
        }
        self.design.scale * x
    }

    pub fn is_finite(&self) -> bool {
        self.delay_line.iter().all(|v| v.is_finite())
            && self.sections.iter().flatten().all(|v| v.is_finite())
            && self.phase.iter().flatten().all(|v| v.is_finite())
    }
}

/// Exact response of the sampled chain on `omega_grid` (rad/s).
pub fn chain_frequency_response(
    config: &FeedbackChainConfig,
    dt: f64,
    omega_grid: &[f64],
) -> Result<FrequencyResponse> {
    let design = ChainDesign::new(config, dt)?;
    let nyquist_guard = 2.0 * PI * 0.4 / dt;
    if omega_grid.iter().any(|&w| w.abs() > nyquist_guard) {
        log::warn!("response grid extends beyond 0.4/dt; values there are aliased");
    }
    FrequencyResponse::from_fn(omega_grid, ResponseKind::Gain, |w| design.response(w))
}

/// Set phase and gain so the chain response at `omega_target` equals
/// `target`. Only this single frequency is matched.
pub fn tune_to_critical(
    config: &FeedbackChainConfig,
    dt: f64,
    target: Complex64,
    omega_target: f64,
) -> Result<FeedbackChainConfig> {
    if (omega_target - config.center_freq).abs() > config.bandwidth / 2.0 {
        return Err(Error::OutsidePassband { omega: omega_target });
    }
    let mut tuned = FeedbackChainConfig { enabled: true, gain_mag: 1.0, phase_deg: target.arg().to_degrees(), ..config.clone() };
    for _ in 0..100 {
        let err = wrap_pi(target.arg() - ChainDesign::new(&tuned, dt)?.response(omega_target).arg());
        tuned.phase_deg = wrap_pi(tuned.phase_deg.to_radians() + err).to_degrees();
        if err.abs() < 1e-13 {
            break;
        }
    }
    let unit = ChainDesign::new(&tuned, dt)?.response(omega_target).norm();
    let gain = target.norm() / unit;
    if gain > config.gain_ceiling {
        return Err(Error::UnreachableGain { required: gain, ceiling: config.gain_ceiling });
    }
    tuned.gain_mag = gain;
    Ok(tuned)
}

/// Transmitted-power detector: `i = |a_in − √(2γ_in) a|²` photons/s with
/// optional shot noise of one-sided PSD `2ī`.
#[derive(Debug, Clone, Copy)]
pub struct Detector {
    a_in: f64,
    sqrt_2gamma_in: f64,
}

impl Detector {
    pub fn new(config: &ValidConfig) -> Detector {
        Detector {
            a_in: config.photon_flux().sqrt(),
            sqrt_2gamma_in: (2.0 * config.optical.gamma_in).sqrt(),
        }
    }

    pub fn mean(&self, a: Complex64) -> f64 {
        (self.a_in - self.sqrt_2gamma_in * a).norm_sqr()
    }

    /// One sample averaged over `dt`; per-sample noise std is √(ī/dt).
    pub fn sample<R: Rng + ?Sized>(&self, a: Complex64, rng: Option<&mut R>, dt: f64) -> f64 {
        let mean = self.mean(a);
        match rng {
            Some(rng) => {
                let n: f64 = rng.sample(StandardNormal);
                mean + (mean / dt).sqrt() * n
            }
            None => mean,
        }
    }
}

pub fn photocurrent_sample<R: Rng + ?Sized>(a: Complex64, config: &ValidConfig, rng: Option<&mut R>, dt: f64) -> f64 {
    Detector::new(config).sample(a, rng, dt)
}
