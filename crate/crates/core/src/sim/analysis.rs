//! Envelope measurements on recorded trajectories.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::Trajectory;
use crate::error::{Error, Result};
use crate::spectral::{self, HarmonicPeak, PsdUnits};

pub const MIN_R_SQUARED: f64 = 0.98;
/// Periods covered by each of the two cascaded moving averages.
const SMOOTHING_PERIODS: f64 = 10.0;
/// Envelope slope allowed in a saturated window, relative per 1000 periods.
const SATURATION_SLOPE: f64 = 0.01;
const BLOCK_PERIODS: f64 = 200.0;
const MIN_SATURATED_BLOCKS: usize = 5;
/// Blocks in the window stay within this fraction of the final level.
const LEVEL_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthRate {
    /// Amplitude growth rate (1/s); positive means unstable.
    pub rate: f64,
    /// Half-width of the nominal 95% interval from the fit residuals.
    pub ci95: f64,
    pub r_squared: f64,
    /// Fit window (s).
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycleReport {
    pub mode_label: String,
    /// Mean envelope amplitude over the saturated window (m).
    pub amplitude: f64,
    pub amplitude_rel_std: f64,
    /// Linewidth of the photocurrent peak at the oscillation (rad/s).
    pub gamma_ss: f64,
    /// Oscillation frequency (Hz).
    pub frequency: f64,
    /// Photocurrent lines at k·f for k = 1..=4.
    pub harmonics: Vec<HarmonicPeak>,
    /// Amplitude of each line (photons/s), floor removed.
    pub harmonic_amplitudes: Vec<f64>,
    pub window: (f64, f64),
    /// Mean photon number over the saturated window.
    pub mean_photons: Option<f64>,
}

fn moving_average(input: &[Complex64], len: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(input.len().saturating_sub(len - 1));
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, v) in input.iter().enumerate() {
        acc += v;
        if k >= len {
            acc -= input[k - len];
        }
        if k + 1 >= len {
            out.push(acc / len as f64);
        }
    }
    out
}

/// Complex envelope of a mode: the series is demodulated at the mode
/// frequency and low-passed by two moving averages of ten periods each,
/// which keeps only the band around the resonance. Returns the envelope
/// and the record index of its first sample.
pub fn envelope(traj: &Trajectory, mode: usize) -> Result<(Vec<Complex64>, usize)> {
    let info = &traj.modes[mode];
    let x = traj
        .x
        .get(mode)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::InsufficientData("trajectory has no position record".into()))?;
    let dt = traj.sample_dt();
    let len = ((SMOOTHING_PERIODS * 2.0 * PI / info.omega_m) / dt).round().max(1.0) as usize;
    if x.len() < 4 * len {
        return Err(Error::InsufficientData(format!("{} samples, need at least {}", x.len(), 4 * len)));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let rot = Complex64::from_polar(1.0, -info.omega_m * dt);
    let mut ph = Complex64::new(1.0, 0.0);
    let mut demod = Vec::with_capacity(x.len());
    for (k, v) in x.iter().enumerate() {
        demod.push(2.0 * (v - mean) * ph);
        ph *= rot;
        if k % 1024 == 1023 {
            ph /= ph.norm();
        }
    }
    let once = moving_average(&demod, len);
    let twice = moving_average(&once, len);
    // group delay of the two boxcars
    Ok((twice, len - 1))
}

struct LineFit {
    slope: f64,
    slope_se: f64,
    r_squared: f64,
}

fn fit_line(t: &[f64], y: &[f64]) -> LineFit {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in t.iter().zip(y) {
        stt += (a - tm) * (a - tm);
        sty += (a - tm) * (b - ym);
        syy += (b - ym) * (b - ym);
    }
    let slope = sty / stt;
    let ss_res = (syy - slope * sty).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 0.0 };
    let slope_se = (ss_res / (n - 2.0).max(1.0) / stt).sqrt();
    LineFit { slope, slope_se, r_squared }
}

fn median_of(v: &[f64]) -> f64 {
    spectral::median(v)
}

/// Amplitude growth rate from a log-envelope fit.
///
/// The window starts after the smoothing transient. A growing run is cut
/// where the envelope first reaches a tenth of its maximum, a decaying run
/// where it first falls to three times the late-time level.
pub fn growth_rate(traj: &Trajectory, mode_label: &str) -> Result<GrowthRate> {
    let j = traj.mode_index(mode_label)?;
    let (env, offset) = envelope(traj, j)?;
    let mag: Vec<f64> = env.iter().map(|z| z.norm()).collect();
    let n = mag.len();
    let edge = (n / 50).max(1);
    let start_level = median_of(&mag[..edge]);
    let late_level = median_of(&mag[n - 5 * edge.min(n / 5)..]);
    let peak = mag.iter().cloned().fold(0.0, f64::max);

    let mut end = n;
    if peak > 10.0 * start_level {
        end = mag.iter().position(|&m| m > 0.1 * peak).unwrap_or(n);
    } else if start_level > 10.0 * late_level {
        end = mag.iter().position(|&m| m < 3.0 * late_level).unwrap_or(n);
    }
    let period_samples = 2.0 * PI / traj.modes[j].omega_m / traj.sample_dt();
    if (end as f64) < 50.0 * period_samples {
        return Err(Error::InsufficientData("exponential epoch shorter than 50 periods".into()));
    }
    let t: Vec<f64> = (0..end).map(|k| traj.time(k + offset)).collect();
    let y: Vec<f64> = mag[..end].iter().map(|m| m.max(f64::MIN_POSITIVE).ln()).collect();
    let fit = fit_line(&t, &y);
    if !(fit.r_squared >= MIN_R_SQUARED) {
        return Err(Error::FitQuality { r_squared: fit.r_squared, required: MIN_R_SQUARED });
    }
    Ok(GrowthRate {
        rate: fit.slope,
        ci95: 1.96 * fit.slope_se,
        r_squared: fit.r_squared,
        window: (t[0], t[end - 1]),
    })
}

/// Saturated-oscillation figures for one mode.
///
/// The saturated window is the longest tail of the run, in blocks of 200
/// periods, over which the block-mean envelope changes by less than 1% per
/// 1000 periods and every block mean stays within 5% of the final level.
/// It must hold at least 1000 periods and an amplitude above ten thermal
/// standard deviations.
pub fn limit_cycle(traj: &Trajectory, mode_label: &str) -> Result<LimitCycleReport> {
    let j = traj.mode_index(mode_label)?;
    let info = &traj.modes[j];
    let (env, offset) = envelope(traj, j)?;
    let mag: Vec<f64> = env.iter().map(|z| z.norm()).collect();
    let dt = traj.sample_dt();
    let period = 2.0 * PI / info.omega_m;
    let block = ((BLOCK_PERIODS * period / dt).round() as usize).max(1);
    let blocks: Vec<f64> = mag.chunks_exact(block).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let not_saturated = || Error::NotSaturated(mode_label.to_string());
    if blocks.len() < MIN_SATURATED_BLOCKS {
        return Err(not_saturated());
    }
    let block_t: Vec<f64> = (0..blocks.len()).map(|b| b as f64 * block as f64 * dt).collect();
    let tail = blocks.len() - MIN_SATURATED_BLOCKS;
    let tail_mean = blocks[tail..].iter().sum::<f64>() / MIN_SATURATED_BLOCKS as f64;
    let mut first = blocks.len();
    for s in (0..=tail).rev() {
        if (blocks[s] - tail_mean).abs() > LEVEL_TOLERANCE * tail_mean {
            break;
        }
        let fit = fit_line(&block_t[s..], &blocks[s..]);
        let mean = blocks[s..].iter().sum::<f64>() / (blocks.len() - s) as f64;
        let per_1000 = fit.slope.abs() * 1000.0 * period / mean;
        if per_1000 < SATURATION_SLOPE {
            first = s;
        } else {
            break;
        }
    }
    if first == blocks.len() {
        return Err(not_saturated());
    }
    let start = first * block;
    let stop = blocks.len() * block;
    let window = &mag[start..stop];
    let amplitude = window.iter().sum::<f64>() / window.len() as f64;
    let thermal = (2.0 * info.thermal_variance).sqrt();
    if !(amplitude > 10.0 * thermal && amplitude > 0.0) {
        return Err(not_saturated());
    }
    let var = window.iter().map(|m| (m - amplitude).powi(2)).sum::<f64>() / window.len() as f64;

    // Photocurrent over the same record span.
    let (r0, r1) = (start + offset, stop + offset);
    let current = traj
        .photocurrent
        .get(r0..r1)
        .ok_or_else(|| Error::InsufficientData("trajectory has no photocurrent record".into()))?;
    let duration = current.len() as f64 * dt;
    let rbw = (3.0 / duration).min(spectral::DEFAULT_RBW_HZ);
    let mut spec = spectral::psd_at_rbw(current, dt, rbw, PsdUnits::Photocurrent)?;
    spec.averaging_window_s = Some(dt);
    let f_nominal = info.omega_m / (2.0 * PI);
    let (lo, hi) = (spec.bin(0.95 * f_nominal), spec.bin(1.05 * f_nominal));
    let k = (lo..=hi).max_by(|&a, &b| spec.psd[a].total_cmp(&spec.psd[b])).unwrap_or(lo);
    let frequency = spec.freq(k);
    let harmonics = spectral::harmonic_scan(&spec, frequency, 4)?;
    let harmonic_amplitudes = harmonics
        .iter()
        .map(|h| spectral::line_power(&spec, h.freq).map(|p| (2.0 * p.max(0.0)).sqrt()))
        .collect::<Result<Vec<_>>>()?;
    let gamma_ss = spectral::lorentzian_width(&spec, frequency, 10)?.max(0.0);
    let mean_photons = traj
        .field
        .get(r0..r1)
        .map(|a| a.iter().map(|z| z.norm_sqr()).sum::<f64>() / a.len() as f64);

    Ok(LimitCycleReport {
        mode_label: mode_label.to_string(),
        amplitude,
        amplitude_rel_std: var.sqrt() / amplitude,
        gamma_ss,
        frequency,
        harmonics,
        harmonic_amplitudes,
        window: (traj.time(r0), traj.time(r1 - 1)),
        mean_photons,
    })
}

