//! Stochastic time-domain integration of the coupled cavity field and
//! mechanical modes with the feedback chain in the loop.
//!
//! State: `(x_j, v_j)` per mode and the complex intracavity amplitude `a`.
//!
//! ```text
//! ȧ   = (−γ + iΔ(t)) a + √(2γ_in) a_in,    Δ(t) = Δ₀ + Σ g_j x_j + δΔ cos(ω_ref t)
//! ẍ_j = −Γ_j ẋ_j − ω_j² x_j + (ħ g_j |a|² + F_fb) / m_j + thermal
//! ```
//!
//! The deterministic part is advanced by classical RK4 with the feedback
//! force held over the step; thermal forcing is added as a velocity kick of
//! standard deviation √(2 Γ_j k_B T dt / m_j) after each step.

mod analysis;
mod io;

pub use analysis::{envelope, growth_rate, limit_cycle, GrowthRate, LimitCycleReport};
pub use io::{read_binary, write_binary, write_csv};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::ValidConfig;
use crate::signal_chain::{ChainState, Detector};
use crate::steady_state::{operating_point, transmitted_mean_field, SteadyState};
use crate::units::{HBAR, K_B};

/// Fraction of the shortest period / cavity time allowed per step.
pub const DT_GUARD_FRACTION: f64 = 0.02;
pub const DEFAULT_X_CEILING: f64 = 1e-6;
/// Minimum number of periods of the slowest mode in a run.
pub const MIN_PERIODS: f64 = 100.0;

const STREAM_INITIAL: u64 = 1;
const STREAM_THERMAL: u64 = 2;
const STREAM_SHOT: u64 = 3;

/// Which series a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub positions: bool,
    pub velocities: bool,
    pub field: bool,
    pub photocurrent: bool,
    pub force: bool,
}

impl Channels {
    pub const ALL: Channels = Channels { positions: true, velocities: true, field: true, photocurrent: true, force: true };
    pub const NONE: Channels = Channels { positions: false, velocities: false, field: false, photocurrent: false, force: false };
    pub const POSITIONS: Channels = Channels { positions: true, ..Channels::NONE };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPlan {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub record_decimation: usize,
    pub feedback_enabled: bool,
    /// Initial stretch (s) excluded from records and moments.
    pub transient_skip: f64,
    pub shot_noise: bool,
    /// Draw initial positions and velocities from the thermal distribution.
    pub thermal_initial: bool,
    /// Extra initial displacement per mode label (m).
    pub initial_displacement: Vec<(String, f64)>,
    /// Abort when any |x_j − x̄_j| exceeds this (m).
    pub x_ceiling: f64,
    pub channels: Channels,
    /// Noise draws per step, summed and rescaled. A run at `dt` with
    /// `noise_substeps = 2` sees the same Wiener path as one at `dt/2`
    /// with `noise_substeps = 1` and the same seed.
    pub noise_substeps: usize,
}

impl SimPlan {
    /// Largest step the guard allows for this configuration. The cavity
    /// time is ignored when no light is injected, since the field then
    /// stays identically zero.
    pub fn max_dt(config: &ValidConfig) -> f64 {
        let w_max = config.mechanics.iter().map(|m| m.omega_m).fold(0.0, f64::max);
        let mut limit = 2.0 * PI / w_max;
        if config.photon_flux() > 0.0 {
            limit = limit.min(1.0 / config.optical.gamma_total());
        }
        DT_GUARD_FRACTION * limit
    }

    /// Decimation giving a recorded sample rate of at least 8× the highest
    /// mechanical frequency (Hz).
    pub fn decimation_for(config: &ValidConfig, dt: f64) -> usize {
        let f_max = config.mechanics.iter().map(|m| m.omega_m).fold(0.0, f64::max) / (2.0 * PI);
        ((1.0 / (dt * 8.0 * f_max)).floor() as usize).max(1)
    }

    /// A plan at the guard step with the default record rate.
    pub fn new(config: &ValidConfig, duration: f64, seed: u64) -> SimPlan {
        let dt = Self::max_dt(config) * (1.0 - 1e-9);
        SimPlan {
            dt,
            duration,
            seed,
            record_decimation: Self::decimation_for(config, dt),
            feedback_enabled: config.feedback.enabled,
            transient_skip: 0.0,
            shot_noise: true,
            thermal_initial: true,
            initial_displacement: Vec::new(),
            x_ceiling: DEFAULT_X_CEILING,
            channels: Channels::ALL,
            noise_substeps: 1,
        }
    }

    /// Halve the step keeping the same record times and Wiener path.
    pub fn refined(&self) -> Result<SimPlan> {
        if !self.noise_substeps.is_multiple_of(2) {
            return Err(Error::Plan("refining needs an even noise_substeps".into()));
        }
        Ok(SimPlan {
            dt: self.dt / 2.0,
            record_decimation: self.record_decimation * 2,
            noise_substeps: self.noise_substeps / 2,
            ..self.clone()
        })
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn validate(&self, config: &ValidConfig) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt = {:e} must be positive", self.dt));
        } else {
            let max = Self::max_dt(config);
            if self.dt > max {
                problems.push(format!("dt = {:e} s exceeds the stability guard {max:e} s", self.dt));
            }
        }
        let w_min = config.mechanics.iter().map(|m| m.omega_m).fold(f64::INFINITY, f64::min);
        let min_duration = MIN_PERIODS * 2.0 * PI / w_min;
        if !(self.duration >= min_duration) {
            problems.push(format!("duration {:e} s is shorter than {MIN_PERIODS} periods ({min_duration:e} s)", self.duration));
        }
        if self.record_decimation == 0 {
            problems.push("record_decimation must be at least 1".into());
        }
        if self.noise_substeps == 0 {
            problems.push("noise_substeps must be at least 1".into());
        }
        if !(self.transient_skip >= 0.0 && self.transient_skip < self.duration) {
            problems.push(format!("transient_skip {:e} s must lie in [0, duration)", self.transient_skip));
        }
        if !(self.x_ceiling > 0.0) {
            problems.push("x_ceiling must be positive".into());
        }
        let w_max = config.mechanics.iter().map(|m| m.omega_m).fold(0.0, f64::max);
        let record_rate = 1.0 / (self.dt * self.record_decimation as f64);
        if self.record_decimation > 0 && record_rate < 4.0 * w_max / (2.0 * PI) {
            problems.push(format!(
                "recorded sample rate {record_rate:e} Hz is below 4x the highest mechanical frequency"
            ));
        }
        for (label, x) in &self.initial_displacement {
            if config.mode(label).is_err() {
                problems.push(format!("initial displacement for unknown mode {label:?}"));
            }
            if !x.is_finite() {
                problems.push(format!("initial displacement for {label:?} is not finite"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Plan(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeInfo {
    pub label: String,
    pub omega_m: f64,
    pub gamma_m: f64,
    pub mass: f64,
    pub x_bar: f64,
    /// k_B T/(m ω²) at the run temperature (m²).
    pub thermal_variance: f64,
}

/// Running moments of x_j − x̄_j over every step after the transient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.sum_sq / self.count as f64 - m * m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Time of the first record (s).
    pub t0: f64,
    /// Integrator step (s).
    pub dt: f64,
    pub decimation: usize,
    pub seed: u64,
    pub modes: Vec<ModeInfo>,
    /// Positions (m), one series per mode, sampled at block ends.
    pub x: Vec<Vec<f64>>,
    /// Velocities (m/s), sampled at block ends.
    pub v: Vec<Vec<f64>>,
    /// Intracavity amplitude (√photons), sampled at block ends.
    pub field: Vec<Complex64>,
    /// Photocurrent (photons/s) averaged over each block.
    pub photocurrent: Vec<f64>,
    /// Feedback force (N) averaged over each block.
    pub force: Vec<f64>,
    pub moments: Vec<Moments>,
    /// Steady-state photon number and mean photocurrent of the operating point.
    pub n_bar: f64,
    pub i_bar: f64,
}

impl Trajectory {
    pub fn sample_dt(&self) -> f64 {
        self.dt * self.decimation as f64
    }

    pub fn len(&self) -> usize {
        [
            self.x.first().map_or(0, Vec::len),
            self.field.len(),
            self.photocurrent.len(),
            self.force.len(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.sample_dt()
    }

    pub fn mode_index(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.label == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    /// Recorded photon number |a|².
    pub fn photon_number(&self) -> Vec<f64> {
        self.field.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Check the stored-series invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let lens = self.x.iter().chain(&self.v).map(Vec::len).chain([self.field.len(), self.photocurrent.len(), self.force.len()]);
        for l in lens {
            if l != 0 && l != n {
                return Err(Error::Format(format!("series lengths differ ({l} vs {n})")));
            }
        }
        let finite = self.x.iter().chain(&self.v).flatten().all(|v| v.is_finite())
            && self.field.iter().all(|a| a.re.is_finite() && a.im.is_finite())
            && self.photocurrent.iter().chain(&self.force).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Format("non-finite sample".into()));
        }
        Ok(())
    }
}

/// Largest number of mechanical modes the integrator accepts.
pub const MAX_MODES: usize = 6;

#[derive(Clone, Copy)]
struct State<const N: usize> {
    x: [f64; N],
    v: [f64; N],
    ar: f64,
    ai: f64,
}

impl<const N: usize> State<N> {
    #[inline(always)]
    fn axpy(&self, h: f64, k: &State<N>) -> State<N> {
        let mut out = *self;
        for j in 0..N {
            out.x[j] += h * k.x[j];
            out.v[j] += h * k.v[j];
        }
        out.ar += h * k.ar;
        out.ai += h * k.ai;
        out
    }
}

struct Params<const N: usize> {
    gamma: f64,
    delta_0: f64,
    drive: f64,
    optics: bool,
    g: [f64; N],
    gamma_m: [f64; N],
    omega_sq: [f64; N],
    inv_mass: [f64; N],
}

impl<const N: usize> Params<N> {
    #[inline(always)]
    fn deriv(&self, y: &State<N>, tone: f64, force: f64) -> State<N> {
        let mut dy = State { x: y.v, v: [0.0; N], ar: 0.0, ai: 0.0 };
        let mut photons = 0.0;
        if self.optics {
            let mut delta = self.delta_0 + tone;
            for j in 0..N {
                delta += self.g[j] * y.x[j];
            }
            dy.ar = -self.gamma * y.ar - delta * y.ai + self.drive;
            dy.ai = -self.gamma * y.ai + delta * y.ar;
            photons = y.ar * y.ar + y.ai * y.ai;
        }
        for j in 0..N {
            dy.v[j] = -self.gamma_m[j] * y.v[j] - self.omega_sq[j] * y.x[j]
                + (HBAR * self.g[j] * photons + force) * self.inv_mass[j];
        }
        dy
    }
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    std::array::from_fn(|i| std::array::from_fn(|k| a[i][0] * b[0][k] + a[i][1] * b[1][k]))
}

/// One RK4 step of the free oscillator ẋ = v, v̇ = −Γv − ω²x, written as
/// the matrix I + hA + (hA)²/2 + (hA)³/6 + (hA)⁴/24.
fn rk4_propagator(gamma_m: f64, omega_sq: f64, h: f64) -> Mat2 {
    let ha = [[0.0, h], [-omega_sq * h, -gamma_m * h]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..=4 {
        term = mat_mul(&term, &ha);
        for i in 0..2 {
            for l in 0..2 {
                term[i][l] /= k as f64;
                sum[i][l] += term[i][l];
            }
        }
    }
    sum
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Integrate from the selected operating point.
pub fn integrate(config: &ValidConfig, plan: &SimPlan) -> Result<Trajectory> {
    let state = operating_point(config)?;
    integrate_from(config, &state, plan)
}

/// Integrate from a given steady state.
pub fn integrate_from(config: &ValidConfig, state: &SteadyState, plan: &SimPlan) -> Result<Trajectory> {
    plan.validate(config)?;
    match config.mechanics.len() {
        1 => run::<1>(config, state, plan),
        2 => run::<2>(config, state, plan),
        3 => run::<3>(config, state, plan),
        4 => run::<4>(config, state, plan),
        5 => run::<5>(config, state, plan),
        6 => run::<6>(config, state, plan),
        n => Err(Error::Plan(format!("{n} mechanical modes; the integrator supports at most {MAX_MODES}"))),
    }
}

fn per_mode<const N: usize>(config: &ValidConfig, f: impl Fn(&crate::model::MechanicalMode) -> f64) -> [f64; N] {
    std::array::from_fn(|j| f(&config.mechanics[j]))
}

fn run<const N: usize>(config: &ValidConfig, state: &SteadyState, plan: &SimPlan) -> Result<Trajectory> {
    let dt = plan.dt;
    let temperature = config.environment.temperature;
    let flux = config.photon_flux();
    let params = Params::<N> {
        gamma: config.optical.gamma_total(),
        delta_0: config.optical.delta_0,
        drive: (2.0 * config.optical.gamma_in * flux).sqrt(),
        optics: flux > 0.0,
        g: per_mode(config, |m| m.coupling_g),
        gamma_m: per_mode(config, |m| m.gamma_m),
        omega_sq: per_mode(config, |m| m.omega_m * m.omega_m),
        inv_mass: per_mode(config, |m| 1.0 / m.mass),
    };
    let kick: [f64; N] =
        per_mode(config, |m| (2.0 * m.gamma_m * K_B * temperature * dt / m.mass / plan.noise_substeps as f64).sqrt());
    let x_bar: [f64; N] = std::array::from_fn(|j| state.x_bar[j]);
    let modes: Vec<ModeInfo> = config
        .mechanics
        .iter()
        .zip(&state.x_bar)
        .map(|(m, &xb)| ModeInfo {
            label: m.label.clone(),
            omega_m: m.omega_m,
            gamma_m: m.gamma_m,
            mass: m.mass,
            x_bar: xb,
            thermal_variance: m.thermal_variance(temperature),
        })
        .collect();

    let mut rng_init = stream(plan.seed, STREAM_INITIAL);
    let mut rng_thermal = stream(plan.seed, STREAM_THERMAL);
    let mut rng_shot = stream(plan.seed, STREAM_SHOT);

    let mut y = State::<N> { x: x_bar, v: [0.0; N], ar: state.a_bar.re, ai: state.a_bar.im };
    for (j, m) in config.mechanics.iter().enumerate() {
        if plan.thermal_initial && temperature > 0.0 {
            y.x[j] += m.thermal_variance(temperature).sqrt() * rng_init.sample::<f64, _>(StandardNormal);
            y.v[j] = (K_B * temperature / m.mass).sqrt() * rng_init.sample::<f64, _>(StandardNormal);
        }
    }
    for (label, x0) in &plan.initial_displacement {
        let (j, _) = config.mode(label)?;
        y.x[j] += x0;
    }

    let detector = Detector::new(config);
    let i_bar = transmitted_mean_field(state, config).i_bar;
    let mut chain = if plan.feedback_enabled && config.feedback.enabled {
        Some(ChainState::new(&config.feedback, dt)?)
    } else {
        None
    };

    // Reference tone as a rotating phasor: value at t, t + dt/2, t + dt.
    let tone = match &config.drive.reference_tone {
        Some(t) if params.optics && t.depth != 0.0 => Some((
            t.depth,
            Complex64::from_polar(1.0, t.omega * dt / 2.0),
            Complex64::from_polar(1.0, t.omega * dt),
        )),
        _ => None,
    };
    let mut phasor = Complex64::new(1.0, 0.0);

    // In the dark, with nothing fed back, every mode is a free oscillator
    // and the RK4 step collapses to a fixed 2×2 map per mode.
    let free: Option<[Mat2; N]> = (!params.optics && chain.is_none())
        .then(|| std::array::from_fn(|j| rk4_propagator(params.gamma_m[j], params.omega_sq[j], dt)));

    let steps = plan.steps();
    let skip = (plan.transient_skip / dt).round() as u64;
    let dec = plan.record_decimation as u64;
    let records = ((steps - skip.min(steps)) / dec) as usize;
    let ch = plan.channels;
    let series = |on: bool| if on { Vec::with_capacity(records) } else { Vec::new() };
    let mut xs: Vec<Vec<f64>> = (0..N).map(|_| series(ch.positions)).collect();
    let mut vs: Vec<Vec<f64>> = (0..N).map(|_| series(ch.velocities)).collect();
    let mut field = if ch.field { Vec::with_capacity(records) } else { Vec::new() };
    let mut current = series(ch.photocurrent);
    let mut forces = series(ch.force);
    let mut moments = [Moments::default(); N];

    // Shot noise only matters when someone looks at the photocurrent.
    let draw_shot = plan.shot_noise && params.optics && (ch.photocurrent || chain.is_some());
    let shot_scale = 1.0 / (plan.noise_substeps as f64).sqrt();
    let thermal = temperature > 0.0;
    let (mut i_acc, mut f_acc, mut in_block) = (0.0, 0.0, 0u64);

    for step in 0..steps {
        let i_now = if params.optics {
            let mean = detector.mean(Complex64::new(y.ar, y.ai));
            if draw_shot {
                let mut z = 0.0;
                for _ in 0..plan.noise_substeps {
                    z += rng_shot.sample::<f64, _>(StandardNormal);
                }
                mean + (mean / dt).sqrt() * z * shot_scale
            } else {
                mean
            }
        } else {
            0.0
        };
        let force = match chain.as_mut() {
            Some(c) => c.process_sample(i_now - i_bar),
            None => 0.0,
        };

        let (t0, th, t1) = match tone {
            Some((depth, half, full)) => {
                let a = depth * phasor.re;
                let b = depth * (phasor * half).re;
                phasor *= full;
                if step % 4096 == 4095 {
                    phasor /= phasor.norm();
                }
                (a, b, depth * phasor.re)
            }
            None => (0.0, 0.0, 0.0),
        };

        if let Some(maps) = &free {
            for j in 0..N {
                let (x, v) = (y.x[j], y.v[j]);
                let m = &maps[j];
                y.x[j] = m[0][0] * x + m[0][1] * v;
                y.v[j] = m[1][0] * x + m[1][1] * v;
            }
        } else {
            let k1 = params.deriv(&y, t0, force);
            let k2 = params.deriv(&y.axpy(0.5 * dt, &k1), th, force);
            let k3 = params.deriv(&y.axpy(0.5 * dt, &k2), th, force);
            let k4 = params.deriv(&y.axpy(dt, &k3), t1, force);
            for j in 0..N {
                y.x[j] += dt / 6.0 * (k1.x[j] + 2.0 * (k2.x[j] + k3.x[j]) + k4.x[j]);
                y.v[j] += dt / 6.0 * (k1.v[j] + 2.0 * (k2.v[j] + k3.v[j]) + k4.v[j]);
            }
            y.ar += dt / 6.0 * (k1.ar + 2.0 * (k2.ar + k3.ar) + k4.ar);
            y.ai += dt / 6.0 * (k1.ai + 2.0 * (k2.ai + k3.ai) + k4.ai);
        }

        if thermal {
            let mut noise = [0.0; N];
            for _ in 0..plan.noise_substeps {
                for z in noise.iter_mut() {
                    *z += rng_thermal.sample::<f64, _>(StandardNormal);
                }
            }
            for j in 0..N {
                y.v[j] += kick[j] * noise[j];
            }
        }

        for j in 0..N {
            let d = y.x[j] - x_bar[j];
            if !(d.abs() <= plan.x_ceiling) {
                return Err(Error::BlowUp {
                    time: (step + 1) as f64 * dt,
                    mode: config.mechanics[j].label.clone(),
                    value: d.abs(),
                    ceiling: plan.x_ceiling,
                });
            }
        }

        if step >= skip {
            for j in 0..N {
                let d = y.x[j] - x_bar[j];
                let m = &mut moments[j];
                m.count += 1;
                m.sum += d;
                m.sum_sq += d * d;
            }
            i_acc += i_now;
            f_acc += force;
            in_block += 1;
            if in_block == dec {
                for j in 0..N {
                    if ch.positions {
                        xs[j].push(y.x[j]);
                    }
                    if ch.velocities {
                        vs[j].push(y.v[j]);
                    }
                }
                if ch.field {
                    field.push(Complex64::new(y.ar, y.ai));
                }
                if ch.photocurrent {
                    current.push(i_acc / dec as f64);
                }
                if ch.force {
                    forces.push(f_acc / dec as f64);
                }
                i_acc = 0.0;
                f_acc = 0.0;
                in_block = 0;
            }
        }
    }
    if let Some(c) = &chain {
        if !c.is_finite() {
            return Err(Error::BlowUp { time: steps as f64 * dt, mode: "feedback chain".into(), value: f64::NAN, ceiling: plan.x_ceiling });
        }
    }

    let traj = Trajectory {
        t0: (skip + dec) as f64 * dt,
        dt,
        decimation: plan.record_decimation,
        seed: plan.seed,
        modes,
        x: if ch.positions { xs } else { Vec::new() },
        v: if ch.velocities { vs } else { Vec::new() },
        field,
        photocurrent: current,
        force: forces,
        moments: moments.to_vec(),
        n_bar: state.n_bar,
        i_bar,
    };
    traj.check()?;
    Ok(traj)
}

#[cfg(test)]
mod tests;
