//! Measurements shared by the scenarios and the acceptance suite.

use std::f64::consts::PI;

use optomech_core::linear_response::{
    bare_susceptibility, critical_chain, critical_gain, effective_params, instability_threshold, modified_susceptibility, Gain,
    Threshold,
};
use optomech_core::model::ValidConfig;
use optomech_core::response::{default_grid, FrequencyResponse};
use optomech_core::signal_chain::{ChainDesign, FeedbackChainConfig};
use optomech_core::sim::{growth_rate, integrate, limit_cycle, Channels, LimitCycleReport, SimPlan, Trajectory};
use optomech_core::spectral::{
    calibrate_displacement, harmonic_scan, local_peak, psd_at_rbw, resonance_exclusions, snr, HarmonicPeak, Provenance,
    PsdUnits, SnrReport, Spectrum,
};
use optomech_core::steady_state::{operating_point, SteadyState};
use optomech_core::Error;

use crate::error::{RunError, RunResult};
use crate::settings::Settings;

/// Initial kick for deterministic growth-rate runs (m); small enough that
/// the motion stays linear over two e-foldings.
pub const KICK_M: f64 = 1e-14;
/// Longest run spent on a single growth-rate point (s).
pub const MAX_GROWTH_RUN_S: f64 = 0.1;

pub fn threshold(cfg: &ValidConfig, label: &str) -> RunResult<Threshold> {
    Ok(instability_threshold(cfg, label, &Gain::Zero)?)
}

/// Largest relative deviation of χ(G_crit) from χ₀ over the default grid of
/// every mode, with the operational critical gain evaluated pointwise.
pub fn cancellation_error(cfg: &ValidConfig) -> RunResult<f64> {
    let state = operating_point(cfg)?;
    let mut worst: f64 = 0.0;
    for m in &cfg.mechanics {
        let grid = default_grid(m.omega_m, &[(m.omega_m, m.gamma_m)]);
        let gcrit = critical_gain(cfg, m, &grid)?;
        let chi0 = bare_susceptibility(m, &grid)?;
        for (k, &w) in grid.iter().enumerate() {
            let chi = modified_susceptibility(cfg, &state, m, &Gain::Constant(gcrit.values()[k]), &[w])?;
            let (a, b) = (chi.values()[0], chi0.values()[k]);
            worst = worst.max((a - b).norm() / b.norm());
        }
    }
    Ok(worst)
}

/// 3×3×3 sweep over detuning, power and input coupling.
pub fn cancellation_sweep(cfg: &ValidConfig) -> RunResult<f64> {
    let mut worst: f64 = 0.0;
    for d in [0.5, 1.0, 2.0] {
        for p in [10e-6, 60e-6, 200e-6] {
            for g in [0.5, 1.0, 2.0] {
                let c = cfg.with(|c| {
                    c.optical.gamma_in = g * c.optical.gamma_0;
                    c.optical.delta_0 = d * c.optical.gamma_total();
                    c.drive.power = p;
                    c.branch = None;
                })?;
                worst = worst.max(cancellation_error(&c)?);
            }
        }
    }
    Ok(worst)
}

/// Largest relative change of the operational critical gain of `label`
/// when Δ doubles, γ_in halves and the power grows tenfold.
pub fn gcrit_invariance(cfg: &ValidConfig, label: &str) -> RunResult<f64> {
    let (_, m) = cfg.mode(label)?;
    let grid = default_grid(m.omega_m, &[(m.omega_m, m.gamma_m)]);
    let reference = critical_gain(cfg, m, &grid)?;
    let mut worst: f64 = 0.0;
    let edits: [fn(&mut optomech_core::model::SystemConfig); 3] =
        [|c| c.optical.delta_0 *= 2.0, |c| c.optical.gamma_in *= 0.5, |c| c.drive.power *= 10.0];
    for edit in edits {
        let changed = cfg.with(edit)?;
        worst = worst.max(critical_gain(&changed, m, &grid)?.max_relative_difference(&reference));
    }
    Ok(worst)
}

pub fn gcrit_at_resonance(cfg: &ValidConfig, label: &str) -> RunResult<FrequencyResponse> {
    let (_, m) = cfg.mode(label)?;
    Ok(critical_gain(cfg, m, &[m.omega_m])?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthPoint {
    pub power: f64,
    pub measured: f64,
    pub ci95: f64,
    /// −γ_eff/2 from linear response.
    pub predicted: f64,
}

/// Deterministic (T = 0, no shot noise, feedback off) growth or decay of a
/// small kick given to `label`, against the linear-response rate.
pub fn growth_point(cfg: &ValidConfig, label: &str, power: f64, seed: u64) -> RunResult<GrowthPoint> {
    let c = cfg.with(|c| {
        c.drive.power = power;
        c.environment.temperature = 0.0;
        c.feedback.enabled = false;
    })?;
    let state = operating_point(&c)?;
    let predicted = effective_params(&c, &state, &Gain::Zero, label)?.amplitude_growth_rate();
    let (_, m) = c.mode(label)?;
    let duration = (2.0 / predicted.abs()).max(400.0 * 2.0 * PI / m.omega_m).min(MAX_GROWTH_RUN_S);
    let plan = SimPlan {
        shot_noise: false,
        thermal_initial: false,
        initial_displacement: vec![(label.to_string(), KICK_M)],
        channels: Channels::POSITIONS,
        ..SimPlan::new(&c, duration, seed)
    };
    let traj = optomech_core::sim::integrate_from(&c, &state, &plan)?;
    let g = growth_rate(&traj, label)?;
    Ok(GrowthPoint { power, measured: g.rate, ci95: g.ci95, predicted })
}

/// Power where the measured rate changes sign, interpolated linearly
/// between the two points that bracket it.
pub fn sign_change(points: &[GrowthPoint]) -> Option<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.power.total_cmp(&b.power));
    sorted.windows(2).find(|w| w[0].measured < 0.0 && w[1].measured >= 0.0).map(|w| {
        let (a, b) = (w[0], w[1]);
        a.power + (b.power - a.power) * (-a.measured) / (b.measured - a.measured)
    })
}

/// ⟨x²⟩ / (k_B T / m ω²) for `label` alone in the dark, started at rest
/// and run for `damping_times` / Γ after ten damping times of settling.
pub fn equipartition_ratio(cfg: &ValidConfig, label: &str, damping_times: f64, seed: u64) -> RunResult<f64> {
    let c = cfg.with(|c| {
        c.drive.power = 0.0;
        c.feedback.enabled = false;
        c.mechanics.retain(|m| m.label == label);
    })?;
    let (_, m) = c.mode(label)?;
    let settle = 10.0 / m.gamma_m;
    let plan = SimPlan {
        channels: Channels::NONE,
        thermal_initial: false,
        transient_skip: settle,
        ..SimPlan::new(&c, settle + damping_times / m.gamma_m, seed)
    };
    let traj = integrate(&c, &plan)?;
    Ok(traj.moments[0].variance() / traj.modes[0].thermal_variance)
}

/// The configured chain retuned to the critical gain of the unstable mode
/// for runs at the guard step of `cfg`.
pub fn tuned_chain(cfg: &ValidConfig, label: &str) -> RunResult<FeedbackChainConfig> {
    let dt = SimPlan::new(cfg, 1.0, 0).dt;
    Ok(critical_chain(cfg, label, dt)?)
}

/// Photocurrent spectrum of records `from..`, tagged with the block
/// averaging of the recorder.
pub fn current_spectrum(traj: &Trajectory, from: usize, rbw: f64) -> RunResult<Spectrum> {
    let series = traj
        .photocurrent
        .get(from..)
        .ok_or_else(|| RunError::Numeric("analysis window outside the record".into()))?;
    let mut s = psd_at_rbw(series, traj.sample_dt(), rbw, PsdUnits::Photocurrent)?;
    s.averaging_window_s = Some(traj.sample_dt());
    Ok(s)
}

/// Calibrated displacement spectrum of the probe and its SNR figures.
pub fn probe_snr(s: &Settings, cfg: &ValidConfig, state: &SteadyState, raw: &Spectrum) -> RunResult<(Spectrum, SnrReport)> {
    let cal = calibrate_displacement(raw, cfg, state, &s.probe_mode)?;
    let report = snr(&cal, s.signal_band, s.floor_band, &resonance_exclusions(cfg))?;
    Ok((cal, report))
}

fn records_for(traj: &Trajectory, seconds: f64) -> usize {
    let n = (seconds / traj.sample_dt()).round() as usize;
    traj.len() - n.min(traj.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub power_w: f64,
    pub feedback_on: bool,
    pub snr_db: f64,
    pub sensitivity_m_rthz: f64,
    pub gamma_eff_rad_s: f64,
    pub unstable: bool,
}

/// Settling time before a sweep measurement: ten amplitude e-foldings for
/// an unstable mode, three energy decay times (at most 10 ms) otherwise.
pub fn settle_time(gamma_eff: f64) -> f64 {
    if gamma_eff < 0.0 {
        20.0 / gamma_eff.abs()
    } else {
        (3.0 / gamma_eff).min(10e-3)
    }
}

/// One point of the SNR-versus-power sweep, with its calibrated spectrum.
pub fn sweep_point(s: &Settings, chain: &FeedbackChainConfig, power: f64, feedback_on: bool, seed: u64) -> RunResult<(SweepRow, Spectrum)> {
    let cfg = s.system.with(|c| {
        c.drive.power = power;
        c.feedback = if feedback_on { chain.clone() } else { FeedbackChainConfig { enabled: false, ..c.feedback.clone() } };
    })?;
    let state = operating_point(&cfg)?;
    let probe = SimPlan::new(&cfg, 1.0, seed);
    let gain = if feedback_on { Gain::Chain(ChainDesign::new(&cfg.feedback, probe.dt)?) } else { Gain::Zero };
    let eff = effective_params(&cfg, &state, &gain, &s.unstable_mode)?;
    let settle = settle_time(eff.gamma_eff);
    let plan = SimPlan {
        feedback_enabled: feedback_on,
        transient_skip: settle,
        channels: Channels { photocurrent: true, ..Channels::NONE },
        ..SimPlan::new(&cfg, settle + s.sweep_measure, seed)
    };
    let traj = optomech_core::sim::integrate_from(&cfg, &state, &plan)?;
    let raw = current_spectrum(&traj, 0, s.rbw_hz)?;
    let (cal, report) = probe_snr(s, &cfg, &state, &raw)?;
    let row = SweepRow {
        power_w: power,
        feedback_on,
        snr_db: report.snr_db,
        sensitivity_m_rthz: report.sensitivity.unwrap_or(f64::NAN),
        gamma_eff_rad_s: eff.gamma_eff,
        unstable: eff.is_unstable,
    };
    Ok((row, cal))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub feedback_on: bool,
    /// `None` when no saturated window was found.
    pub limit_cycle: Option<LimitCycleReport>,
    /// Orders 1..=4 of the unstable mode in the photocurrent.
    pub harmonics: Vec<HarmonicPeak>,
    pub probe: SnrReport,
    /// Mean |a|² over the first tenth of the run.
    pub photons_early: f64,
    /// Mean |a|² over the saturated window, or the analysis window.
    pub photons_late: f64,
    pub raw: Spectrum,
    pub calibrated: Spectrum,
}

#[derive(Debug, Clone)]
pub struct Suppression {
    pub power: f64,
    pub n_bar: f64,
    pub chain: FeedbackChainConfig,
    pub off: RunSummary,
    pub on: RunSummary,
    /// Feedback-off over feedback-on probe sensitivity.
    pub improvement: f64,
}

fn summarize(s: &Settings, cfg: &ValidConfig, state: &SteadyState, traj: &Trajectory, feedback_on: bool) -> RunResult<RunSummary> {
    let from = records_for(traj, s.suppress_window);
    let raw = current_spectrum(traj, from, s.rbw_hz)?;
    let (calibrated, probe) = probe_snr(s, cfg, state, &raw)?;
    let limit_cycle = match limit_cycle(traj, &s.unstable_mode) {
        Ok(r) => Some(r),
        Err(Error::NotSaturated(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let f_nominal = cfg.mode(&s.unstable_mode)?.1.omega_m / (2.0 * PI);
    let harmonics = match &limit_cycle {
        Some(r) => r.harmonics.clone(),
        None => harmonic_scan(&raw, local_peak(&raw, f_nominal)?.freq, 4)?,
    };
    let photons = traj.photon_number();
    let early = &photons[..(photons.len() / 10).max(1)];
    let photons_early = early.iter().sum::<f64>() / early.len() as f64;
    let photons_late = match limit_cycle.as_ref().and_then(|r| r.mean_photons) {
        Some(n) => n,
        None => photons[from..].iter().sum::<f64>() / (photons.len() - from) as f64,
    };
    Ok(RunSummary { feedback_on, limit_cycle, harmonics, probe, photons_early, photons_late, raw, calibrated })
}

/// The headline run: supra-threshold power, feedback off, then the same
/// seed with the chain tuned to the critical gain.
pub fn suppression(s: &Settings, seed: u64) -> RunResult<Suppression> {
    let base = s.at_power(s.suppress_power)?;
    let state = operating_point(&base)?;
    let chain = tuned_chain(&base, &s.unstable_mode)?;
    let channels = Channels { positions: true, field: true, photocurrent: true, force: true, velocities: false };
    let mut runs = Vec::new();
    for feedback_on in [false, true] {
        let cfg = base.with(|c| {
            c.feedback = if feedback_on { chain.clone() } else { FeedbackChainConfig { enabled: false, ..c.feedback.clone() } };
        })?;
        let plan = SimPlan { feedback_enabled: feedback_on, channels, ..SimPlan::new(&cfg, s.suppress_duration, seed) };
        let traj = optomech_core::sim::integrate_from(&cfg, &state, &plan)?;
        runs.push(summarize(s, &cfg, &state, &traj, feedback_on)?);
    }
    let on = runs.pop().expect("two runs");
    let off = runs.pop().expect("two runs");
    let improvement = off.probe.sensitivity.unwrap_or(f64::NAN) / on.probe.sensitivity.unwrap_or(f64::NAN);
    Ok(Suppression { power: s.suppress_power, n_bar: state.n_bar, chain, off, on, improvement })
}

pub fn calibration_factor(spectrum: &Spectrum) -> f64 {
    match spectrum.provenance {
        Provenance::CalibratedByTone { factor } => factor,
        Provenance::Raw => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToneCheck {
    /// Tone depths δΔ/2π (Hz).
    pub depths_hz: [f64; 2],
    pub factors: [f64; 2],
    pub relative_difference: f64,
}

/// Calibration factor at the configured tone depth and at
/// `calibrate.depth_factor` times it, same seed.
pub fn tone_consistency(s: &Settings, seed: u64) -> RunResult<ToneCheck> {
    let base = s.at_power(s.calibrate_power)?;
    let tone = base
        .drive
        .reference_tone
        .clone()
        .ok_or_else(|| RunError::Config("calibration needs reference.freq_MHz and reference.depth_kHz".into()))?;
    let mut factors = [0.0; 2];
    let mut depths_hz = [0.0; 2];
    for (k, scale) in [1.0, s.calibrate_depth_factor].into_iter().enumerate() {
        let cfg = base.with(|c| {
            c.feedback.enabled = false;
            if let Some(t) = c.drive.reference_tone.as_mut() {
                t.depth = tone.depth * scale;
            }
        })?;
        let state = operating_point(&cfg)?;
        let plan = SimPlan {
            channels: Channels { photocurrent: true, ..Channels::NONE },
            ..SimPlan::new(&cfg, s.calibrate_duration, seed)
        };
        let traj = optomech_core::sim::integrate_from(&cfg, &state, &plan)?;
        let raw = current_spectrum(&traj, 0, s.rbw_hz)?;
        let cal = calibrate_displacement(&raw, &cfg, &state, &s.probe_mode)?;
        factors[k] = calibration_factor(&cal);
        depths_hz[k] = tone.depth * scale / (2.0 * PI);
    }
    Ok(ToneCheck { depths_hz, factors, relative_difference: (factors[1] / factors[0] - 1.0).abs() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorPoint {
    pub power_w: f64,
    /// Median calibrated PSD over the floor band (m²/Hz).
    pub floor_m2_hz: f64,
    pub snr_db: f64,
}

/// Calibrated probe floor at each `calibrate.floor_power_uW`, feedback off,
/// and the fitted exponent of floor ∝ P^k.
pub fn floor_scaling(s: &Settings, seed: u64) -> RunResult<(Vec<FloorPoint>, f64, Vec<Spectrum>)> {
    let mut points = Vec::new();
    let mut spectra = Vec::new();
    for &p in &s.floor_powers {
        let cfg = s.system.with(|c| {
            c.drive.power = p;
            c.feedback.enabled = false;
        })?;
        let state = operating_point(&cfg)?;
        let plan = SimPlan {
            channels: Channels { photocurrent: true, ..Channels::NONE },
            ..SimPlan::new(&cfg, s.floor_duration, seed)
        };
        let traj = optomech_core::sim::integrate_from(&cfg, &state, &plan)?;
        let raw = current_spectrum(&traj, 0, s.rbw_hz)?;
        let (cal, r) = probe_snr(s, &cfg, &state, &raw)?;
        points.push(FloorPoint { power_w: p, floor_m2_hz: r.floor_psd, snr_db: r.snr_db });
        spectra.push(cal);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.power_w.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.floor_m2_hz.ln()).collect();
    Ok((points, log_slope(&xs, &ys), spectra))
}

/// Least-squares slope of `ys` against `xs`.
pub fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
