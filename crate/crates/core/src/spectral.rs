//! One-sided power spectral densities and the figures read off them.
//!
//! Every [`Spectrum`] is one-sided and normalized so that a tone of
//! amplitude `A` integrates to `A²/2` and white noise of variance `σ²`
//! sampled every `dt` has level `2σ²dt`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{MechanicalMode, ValidConfig};
use crate::steady_state::SteadyState;
use crate::units::HBAR;

/// Default resolution bandwidth (Hz).
pub const DEFAULT_RBW_HZ: f64 = 10e3;
/// Peak search half-width around an expected line, in bins.
const SEARCH_BINS: usize = 3;
/// 6 dB as a power ratio.
const PRESENT_RATIO: f64 = 3.981_071_705_534_972;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdUnits {
    /// m²/Hz
    Displacement,
    /// (photons/s)²/Hz
    Photocurrent,
    /// N²/Hz
    Force,
}

impl PsdUnits {
    pub fn label(self) -> &'static str {
        match self {
            PsdUnits::Displacement => "m^2/Hz",
            PsdUnits::Photocurrent => "s^-2/Hz",
            PsdUnits::Force => "N^2/Hz",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        [PsdUnits::Displacement, PsdUnits::Photocurrent, PsdUnits::Force]
            .into_iter()
            .find(|u| u.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Raw,
    /// Calibrated against the reference tone; `factor` is the m² per
    /// (photons/s)² conversion at the tone frequency.
    CalibratedByTone { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // periodic Hann
            Window::Hann => (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin spacing (Hz); bin `k` sits at `k * df`.
    pub df: f64,
    pub psd: Vec<f64>,
    pub units: PsdUnits,
    /// Equivalent noise bandwidth of one bin (Hz).
    pub enbw: f64,
    pub averages: usize,
    pub provenance: Provenance,
    /// Boxcar averaging applied to the series before sampling (s), if any.
    pub averaging_window_s: Option<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.psd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psd.is_empty()
    }

    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.df
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.psd.len()).map(|k| self.freq(k)).collect()
    }

    pub fn max_freq(&self) -> f64 {
        self.freq(self.psd.len().saturating_sub(1))
    }

    pub fn bin(&self, f: f64) -> usize {
        ((f / self.df).round().max(0.0) as usize).min(self.psd.len().saturating_sub(1))
    }

    /// Sum of PSD·df over bins in `[lo, hi]` Hz.
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (self.bin(lo), self.bin(hi));
        self.psd[a..=b].iter().sum::<f64>() * self.df
    }

    /// Total power, the variance of the mean-removed series.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df
    }

    fn band_values(&self, lo: f64, hi: f64) -> &[f64] {
        let (a, b) = (self.bin(lo), self.bin(hi));
        &self.psd[a..=b]
    }

    /// Median PSD over `[lo, hi]` Hz.
    pub fn median(&self, lo: f64, hi: f64) -> f64 {
        median(self.band_values(lo, hi))
    }

    /// Elementwise ratio with unit checking.
    pub fn ratio(&self, other: &Spectrum) -> Result<Vec<f64>> {
        if self.units != other.units {
            return Err(Error::UnitMismatch(self.units.label().into(), other.units.label().into()));
        }
        Ok(self.psd.iter().zip(&other.psd).map(|(a, b)| a / b).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * self.psd.len() + 128);
        let cal = match self.provenance {
            Provenance::Raw => "raw".to_string(),
            Provenance::CalibratedByTone { factor } => format!("tone:{factor:e}"),
        };
        let _ = writeln!(
            s,
            "# units={} df_Hz={:e} enbw_Hz={:e} averages={} calibration={}",
            self.units.label(),
            self.df,
            self.enbw,
            self.averages,
            cal
        );
        s.push_str("freq_Hz,psd\n");
        for (k, p) in self.psd.iter().enumerate() {
            let _ = writeln!(s, "{:e},{p:e}", self.freq(k));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Spectrum> {
        let mut lines = text.lines();
        let header = lines.next().and_then(|h| h.strip_prefix("# ")).ok_or_else(|| Error::Format("missing spectrum header".into()))?;
        let field = |name: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Format(format!("header lacks {name}")))
        };
        let num = |name: &str| -> Result<f64> {
            field(name)?.parse::<f64>().map_err(|e| Error::Format(format!("{name}: {e}")))
        };
        let units = PsdUnits::from_label(field("units")?).ok_or_else(|| Error::Format("unknown units".into()))?;
        let df = num("df_Hz")?;
        let enbw = num("enbw_Hz")?;
        let averages = field("averages")?.parse::<usize>().map_err(|e| Error::Format(format!("averages: {e}")))?;
        let provenance = match field("calibration")? {
            "raw" => Provenance::Raw,
            other => {
                let f = other
                    .strip_prefix("tone:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("bad calibration {other:?}")))?;
                Provenance::CalibratedByTone { factor: f }
            }
        };
        if !(df > 0.0 && df.is_finite()) {
            return Err(Error::Format("df_Hz must be positive".into()));
        }
        if lines.next() != Some("freq_Hz,psd") {
            return Err(Error::Format("missing column header".into()));
        }
        let mut psd = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (f, p) = line.split_once(',').ok_or_else(|| Error::Format(format!("row {}: expected two columns", k + 1)))?;
            let f: f64 = f.trim().parse().map_err(|e| Error::Format(format!("row {}: {e}", k + 1)))?;
            let p: f64 = p.trim().parse().map_err(|e| Error::Format(format!("row {}: {e}", k + 1)))?;
            if (f - psd.len() as f64 * df).abs() > 1e-6 * df.max(f.abs()) {
                return Err(Error::Format(format!("row {}: grid is not uniform", k + 1)));
            }
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Format(format!("row {}: psd must be finite and non-negative", k + 1)));
            }
            psd.push(p);
        }
        Ok(Spectrum { df, psd, units, enbw, averages, provenance, averaging_window_s: None })
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Segment length giving a bin spacing close to `rbw` at sample interval `dt`.
pub fn segment_for_rbw(dt: f64, rbw: f64) -> usize {
    (1.0 / (dt * rbw)).round().max(2.0) as usize
}

/// Welch-averaged one-sided PSD. Each segment has its mean removed.
pub fn psd(
    series: &[f64],
    dt: f64,
    segment_len: usize,
    overlap: f64,
    window: Window,
    units: PsdUnits,
) -> Result<Spectrum> {
    if segment_len < 2 || series.len() < 2 * segment_len {
        return Err(Error::InsufficientData(format!(
            "{} samples for segments of {segment_len}",
            series.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InsufficientData(format!("overlap {overlap} outside [0, 1)")));
    }
    let n = segment_len;
    let step = ((n as f64 * (1.0 - overlap)).round() as usize).max(1);
    let w = window.coefficients(n);
    let w2: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut count = 0;
    let mut start = 0;
    while start + n <= series.len() {
        let seg = &series[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for ((b, &x), &wk) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new((x - mean) * wk, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = dt / (w2 * count as f64);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            one_sided * p * scale
        })
        .collect();
    let df = 1.0 / (n as f64 * dt);
    let sum_w: f64 = w.iter().sum();
    Ok(Spectrum {
        df,
        psd,
        units,
        enbw: df * n as f64 * w2 / (sum_w * sum_w),
        averages: count,
        provenance: Provenance::Raw,
        averaging_window_s: None,
    })
}

/// Welch PSD with Hann window, 50% overlap and bins of about `rbw` Hz.
pub fn psd_at_rbw(series: &[f64], dt: f64, rbw: f64, units: PsdUnits) -> Result<Spectrum> {
    psd(series, dt, segment_for_rbw(dt, rbw), 0.5, Window::Hann, units)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrReport {
    pub peak_freq: f64,
    pub peak_psd: f64,
    pub floor_psd: f64,
    pub snr_db: f64,
    /// √floor in m/√Hz, for calibrated spectra.
    pub sensitivity: Option<f64>,
}

/// Peak-to-median-floor ratio. `exclusions` lists frequencies (Hz) that
/// must not fall inside the floor band.
pub fn snr(
    spectrum: &Spectrum,
    signal_band: (f64, f64),
    floor_band: (f64, f64),
    exclusions: &[f64],
) -> Result<SnrReport> {
    let (s0, s1) = signal_band;
    let (f0, f1) = floor_band;
    if !(s0 < s1 && f0 < f1) {
        return Err(Error::BandOverlap("bands must have positive width".into()));
    }
    if s0 <= f1 && f0 <= s1 {
        return Err(Error::BandOverlap(format!("signal [{s0}, {s1}] Hz overlaps floor [{f0}, {f1}] Hz")));
    }
    if let Some(x) = exclusions.iter().find(|&&x| x >= f0 && x <= f1) {
        return Err(Error::BandOverlap(format!("floor band contains a resonance or harmonic at {x} Hz")));
    }
    if s1 > spectrum.max_freq() || f1 > spectrum.max_freq() {
        return Err(Error::Span { span_hz: spectrum.max_freq(), needed_hz: s1.max(f1) });
    }
    let (a, b) = (spectrum.bin(s0), spectrum.bin(s1));
    let (k, &peak) = spectrum.psd[a..=b]
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty band");
    let floor = spectrum.median(f0, f1);
    let sensitivity = match spectrum.units {
        PsdUnits::Displacement if floor > 0.0 => Some(floor.sqrt()),
        _ => None,
    };
    Ok(SnrReport {
        peak_freq: spectrum.freq(a + k),
        peak_psd: peak,
        floor_psd: floor,
        snr_db: 10.0 * (peak / floor).log10(),
        sensitivity,
    })
}

/// Frequencies (Hz) a floor band must avoid: every mechanical resonance
/// with its 2nd and 3rd harmonics, and the reference tone.
pub fn resonance_exclusions(config: &ValidConfig) -> Vec<f64> {
    let mut out: Vec<f64> = config
        .mechanics
        .iter()
        .flat_map(|m| (1..=3).map(move |k| k as f64 * m.omega_m / (2.0 * PI)))
        .collect();
    if let Some(t) = &config.drive.reference_tone {
        out.push(t.omega / (2.0 * PI));
    }
    out
}

/// √(ħ / (2 m ω_m Γ₀)) in m/√Hz, angular units throughout.
pub fn sql(mode: &MechanicalMode) -> f64 {
    (HBAR / (2.0 * mode.mass * mode.omega_m * mode.gamma_m)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicPeak {
    pub order: usize,
    pub freq: f64,
    pub peak_psd: f64,
    pub floor_psd: f64,
    pub present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub freq: f64,
    pub psd: f64,
    pub floor: f64,
}

impl Peak {
    pub fn ratio(&self) -> f64 {
        self.psd / self.floor
    }
}

/// Largest bin within ±3 bins of `f`, with the median of the surrounding
/// 10–50 bins on both sides as floor.
pub fn local_peak(spectrum: &Spectrum, f: f64) -> Result<Peak> {
    let n = spectrum.len();
    let c = spectrum.bin(f);
    if c < 50 {
        return Err(Error::InsufficientData(format!(
            "{f:e} Hz is within 50 bins of zero at {:e} Hz resolution",
            spectrum.df
        )));
    }
    if c + 50 >= n {
        return Err(Error::Span { span_hz: spectrum.max_freq(), needed_hz: f + 50.0 * spectrum.df });
    }
    let (k, &p) = spectrum.psd[c - SEARCH_BINS..=c + SEARCH_BINS]
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    let mut ring: Vec<f64> = spectrum.psd[c - 50..c - 10].to_vec();
    ring.extend_from_slice(&spectrum.psd[c + 11..=c + 50]);
    Ok(Peak { freq: spectrum.freq(c - SEARCH_BINS + k), psd: p, floor: median(&ring) })
}

/// Look for lines at k·f₀ for k = 1..=max_order.
pub fn harmonic_scan(spectrum: &Spectrum, fundamental: f64, max_order: usize) -> Result<Vec<HarmonicPeak>> {
    let needed = max_order as f64 * fundamental + 50.0 * spectrum.df;
    if needed >= spectrum.max_freq() {
        return Err(Error::Span { span_hz: spectrum.max_freq(), needed_hz: needed });
    }
    (1..=max_order)
        .map(|k| {
            let p = local_peak(spectrum, k as f64 * fundamental)?;
            Ok(HarmonicPeak {
                order: k,
                freq: p.freq,
                peak_psd: p.psd,
                floor_psd: p.floor,
                present: p.ratio() > PRESENT_RATIO,
            })
        })
        .collect()
}

/// Power (variance) of a line: integral over ±3 bins with the local floor
/// removed.
pub fn line_power(spectrum: &Spectrum, f: f64) -> Result<f64> {
    let p = local_peak(spectrum, f)?;
    let c = spectrum.bin(p.freq);
    let lo = c.saturating_sub(SEARCH_BINS);
    let hi = (c + SEARCH_BINS).min(spectrum.len() - 1);
    let total: f64 = spectrum.psd[lo..=hi].iter().map(|v| v - p.floor).sum();
    Ok(total * spectrum.df)
}

/// Boxcar-average response |sinc(ωτ/2)|² of a series averaged over `tau`.
fn boxcar_power(f: f64, tau: Option<f64>) -> f64 {
    match tau {
        Some(t) if f > 0.0 => {
            let x = PI * f * t;
            (x.sin() / x).powi(2)
        }
        _ => 1.0,
    }
}

/// |detuning → photocurrent transfer|² shape, up to a constant:
/// |2γ₀ + iω|² / |γ² + Δ² − ω² + 2iγω|².
fn transduction_shape(config: &ValidConfig, state: &SteadyState, f: f64) -> f64 {
    let w = 2.0 * PI * f;
    let g = config.optical.gamma_total();
    let d = state.delta_eff;
    let num = Complex64::new(2.0 * config.optical.gamma_0, w).norm_sqr();
    let den = Complex64::new(g * g + d * d - w * w, 2.0 * g * w).norm_sqr();
    num / den
}

pub const MIN_TONE_RATIO: f64 = 10.0;

/// Convert a photocurrent spectrum to displacement of `mode_label` using
/// the configured reference tone. The tone is a detuning modulation of
/// depth δΔ, equivalent to a displacement δΔ/g of the mode.
pub fn calibrate_displacement(
    spectrum: &Spectrum,
    config: &ValidConfig,
    state: &SteadyState,
    mode_label: &str,
) -> Result<Spectrum> {
    if spectrum.units != PsdUnits::Photocurrent {
        return Err(Error::UnitMismatch(spectrum.units.label().into(), PsdUnits::Photocurrent.label().into()));
    }
    let (_, mode) = config.mode(mode_label)?;
    let tone = config
        .drive
        .reference_tone
        .as_ref()
        .ok_or_else(|| Error::ToneNotFound("no reference tone configured".into()))?;
    if mode.coupling_g == 0.0 {
        return Err(Error::ToneNotFound(format!("mode {} has zero coupling; the tone has no displacement equivalent", mode.label)));
    }
    let f_ref = tone.omega / (2.0 * PI);
    let peak = local_peak(spectrum, f_ref)?;
    if !(peak.ratio() > MIN_TONE_RATIO) {
        return Err(Error::ToneNotFound(format!(
            "reference tone at {f_ref:e} Hz only {:.1} dB above floor",
            10.0 * peak.ratio().log10()
        )));
    }
    if peak.ratio() < 100.0 {
        log::warn!("reference tone SNR is {:.1} dB (< 20 dB)", 10.0 * peak.ratio().log10());
    }
    let measured = line_power(spectrum, f_ref)?;
    let x_equiv = tone.depth / mode.coupling_g;
    let factor = 0.5 * x_equiv * x_equiv / measured;

    let tau = spectrum.averaging_window_s;
    let shape = |f: f64| transduction_shape(config, state, f) * boxcar_power(f, tau);
    let at_ref = shape(f_ref);
    let psd = spectrum
        .psd
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let f = spectrum.freq(k);
            if k == 0 {
                0.0
            } else {
                p * factor * at_ref / shape(f)
            }
        })
        .collect();
    Ok(Spectrum {
        psd,
        units: PsdUnits::Displacement,
        provenance: Provenance::CalibratedByTone { factor },
        ..spectrum.clone()
    })
}

/// Lorentzian fit `A / ((f − f₀)² + (w/2)²) + floor` around a peak by
/// linear least squares on 1/(PSD − floor); returns the full width in rad/s
/// (never negative).
pub fn lorentzian_width(spectrum: &Spectrum, center: f64, half_span_bins: usize) -> Result<f64> {
    let p = local_peak(spectrum, center)?;
    let c = spectrum.bin(p.freq);
    let h = half_span_bins.max(1);
    if c < 6 * h || c + 6 * h >= spectrum.len() {
        return Err(Error::Span { span_hz: spectrum.max_freq(), needed_hz: center + 6.0 * h as f64 * spectrum.df });
    }
    // floor from well outside the fitted span, clear of the line's wings
    let mut ring: Vec<f64> = spectrum.psd[c - 6 * h..=c - 3 * h].to_vec();
    ring.extend_from_slice(&spectrum.psd[c + 3 * h..=c + 6 * h]);
    let p = Peak { floor: median(&ring).min(p.floor), ..p };
    // 1/(S − floor) = ((f − f0)² + h²)/A is quadratic in f.
    let (mut sx, mut sy) = (Vec::new(), Vec::new());
    for k in c - half_span_bins..=c + half_span_bins {
        let s = spectrum.psd[k] - p.floor;
        if s > 0.1 * (p.psd - p.floor) {
            sx.push(spectrum.freq(k) - p.freq);
            sy.push(1.0 / s);
        }
    }
    if sx.len() < 3 {
        return Ok(2.0 * PI * spectrum.enbw);
    }
    let coeffs = quadratic_fit(&sx, &sy);
    let (c0, c1, c2) = (coeffs[0], coeffs[1], coeffs[2]);
    if c2 <= 0.0 {
        return Ok(2.0 * PI * spectrum.enbw);
    }
    let h2 = c0 / c2 - (c1 / (2.0 * c2)).powi(2);
    Ok(2.0 * PI * 2.0 * h2.max(0.0).sqrt())
}

fn quadratic_fit(x: &[f64], y: &[f64]) -> [f64; 3] {
    let mut m = [[0.0f64; 4]; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let p = [1.0, xi, xi * xi];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += p[r] * p[c];
            }
            m[r][3] += p[r] * yi;
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..3 {
            if r != col && m[col][col] != 0.0 {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn tone_at_bin_center_integrates_to_half() {
        let (n, seg, dt) = (1 << 16, 1024, 1e-8);
        let df = 1.0 / (seg as f64 * dt);
        let f = 100.0 * df;
        let x: Vec<f64> = (0..n).map(|k| (2.0 * PI * f * k as f64 * dt).cos()).collect();
        for w in [Window::Hann, Window::Rectangular] {
            let s = psd(&x, dt, seg, 0.5, w, PsdUnits::Photocurrent).unwrap();
            let p = s.integrate(f - 5.0 * df, f + 5.0 * df);
            assert!((p - 0.5).abs() < 0.005, "{w:?}: {p}");
        }
    }

    #[test]
    fn white_noise_level() {
        let dt = 2e-9;
        let sigma = 3.0;
        let x = noise(1 << 20, sigma, 1);
        let s = psd(&x, dt, 2048, 0.5, Window::Hann, PsdUnits::Photocurrent).unwrap();
        let level = s.psd[1..s.len() - 1].iter().sum::<f64>() / (s.len() - 2) as f64;
        assert!((level / (2.0 * sigma * sigma * dt) - 1.0).abs() < 0.03);
    }

    #[test]
    fn parseval_for_noise() {
        let x = noise(1 << 18, 1.0, 2);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let s = psd(&x, 1e-9, 4096, 0.5, Window::Hann, PsdUnits::Force).unwrap();
        assert!((s.total_power() / var - 1.0).abs() < 0.01);
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(matches!(
            psd(&[0.0; 100], 1.0, 64, 0.5, Window::Hann, PsdUnits::Force),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn pure_noise_snr_is_small() {
        let x = noise(1 << 20, 1.0, 3);
        let s = psd_at_rbw(&x, 5e-9, 10e3, PsdUnits::Photocurrent).unwrap();
        let r = snr(&s, (20e6, 20.1e6), (30e6, 40e6), &[]).unwrap();
        // max of ~10 χ² bins over a median floor
        assert!(r.snr_db.abs() < 6.0, "{}", r.snr_db);
        assert!(r.sensitivity.is_none());
    }

    #[test]
    fn snr_band_checks() {
        let x = noise(1 << 16, 1.0, 4);
        let s = psd_at_rbw(&x, 5e-9, 10e3, PsdUnits::Displacement).unwrap();
        assert!(matches!(snr(&s, (20e6, 21e6), (20.5e6, 22e6), &[]), Err(Error::BandOverlap(_))));
        assert!(matches!(snr(&s, (20e6, 21e6), (22e6, 24e6), &[23e6]), Err(Error::BandOverlap(_))));
        let r = snr(&s, (20e6, 21e6), (22e6, 24e6), &[28e6]).unwrap();
        assert!(r.sensitivity.unwrap() > 0.0);
    }

    #[test]
    fn window_choice_barely_moves_snr_of_resolved_peak() {
        let dt = 5e-9;
        let mut x = noise(1 << 20, 1.0, 5);
        // a resolved line: narrowband noise would need an oscillator, use
        // a slowly drifting tone spread over several bins
        for (k, v) in x.iter_mut().enumerate() {
            let t = k as f64 * dt;
            *v += 0.2 * (2.0 * PI * 20e6 * t + 3.0 * (2.0 * PI * 2e3 * t).sin()).cos();
        }
        let hann = psd(&x, dt, segment_for_rbw(dt, 10e3), 0.5, Window::Hann, PsdUnits::Photocurrent).unwrap();
        let rect = psd(&x, dt, segment_for_rbw(dt, 10e3), 0.5, Window::Rectangular, PsdUnits::Photocurrent).unwrap();
        let a = snr(&hann, (19.9e6, 20.1e6), (30e6, 40e6), &[]).unwrap().snr_db;
        let b = snr(&rect, (19.9e6, 20.1e6), (30e6, 40e6), &[]).unwrap().snr_db;
        assert!((a - b).abs() < 1.0, "{a} vs {b}");
    }

    #[test]
    fn sql_scaling() {
        let cfg = defaults::paper_like();
        let (_, m) = cfg.mode(defaults::PROBE_LABEL).unwrap();
        let base = sql(m);
        let mut heavy = m.clone();
        heavy.mass *= 2.0;
        let mut broad = m.clone();
        broad.gamma_m *= 2.0;
        assert!((base / sql(&heavy) - 2f64.sqrt()).abs() < 1e-12);
        assert!((base / sql(&broad) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn harmonics_of_a_distorted_tone() {
        let dt = 5e-9;
        let f0 = 14e6;
        let mut x = noise(1 << 19, 0.05, 6);
        for (k, v) in x.iter_mut().enumerate() {
            let c = (2.0 * PI * f0 * k as f64 * dt).cos();
            *v += c + 0.1 * c * c + 0.05 * c * c * c;
        }
        let s = psd_at_rbw(&x, dt, 10e3, PsdUnits::Photocurrent).unwrap();
        let h = harmonic_scan(&s, f0, 4).unwrap();
        assert!(h[0].present && h[1].present && h[2].present);
        assert!(!h[3].present);
        assert!((h[1].freq - 2.0 * f0).abs() <= 3.0 * s.df);
        let clean = psd_at_rbw(&noise(1 << 19, 0.05, 7), dt, 10e3, PsdUnits::Photocurrent).unwrap();
        assert!(harmonic_scan(&clean, f0, 4).unwrap().iter().all(|p| !p.present));
        assert!(matches!(harmonic_scan(&s, f0, 8), Err(Error::Span { .. })));
    }

    #[test]
    fn units_mixing_is_an_error() {
        let x = noise(1 << 12, 1.0, 8);
        let a = psd(&x, 1.0, 256, 0.5, Window::Hann, PsdUnits::Force).unwrap();
        let b = psd(&x, 1.0, 256, 0.5, Window::Hann, PsdUnits::Displacement).unwrap();
        assert!(matches!(a.ratio(&b), Err(Error::UnitMismatch(..))));
        assert!(a.ratio(&a).is_ok());
    }

    #[test]
    fn lorentzian_width_recovers_oscillator_linewidth() {
        // AR(2) resonator driven by white noise has a Lorentzian line near
        // its center of width set by the pole radius.
        let dt = 5e-9;
        let f0 = 20e6;
        let width_hz = 200e3;
        let r = (-PI * width_hz * dt).exp();
        let th = 2.0 * PI * f0 * dt;
        let e = noise(1 << 21, 1.0, 9);
        let mut y = vec![0.0; e.len()];
        for k in 2..e.len() {
            y[k] = 2.0 * r * th.cos() * y[k - 1] - r * r * y[k - 2] + e[k];
        }
        let s = psd_at_rbw(&y, dt, 10e3, PsdUnits::Displacement).unwrap();
        let w = lorentzian_width(&s, f0, 40).unwrap();
        assert!((w / (2.0 * PI * width_hz) - 1.0).abs() < 0.1, "{}", w / (2.0 * PI));
    }

    #[test]
    fn csv_round_trip() {
        let x = noise(1 << 12, 1.0, 10);
        let s = psd(&x, 1e-9, 256, 0.5, Window::Hann, PsdUnits::Photocurrent).unwrap();
        let back = Spectrum::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back.units, s.units);
        assert_eq!(back.averages, s.averages);
        for (a, b) in back.psd.iter().zip(&s.psd) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        assert!(Spectrum::from_csv("# units=m^2/Hz\nfreq_Hz,psd\n").is_err());
    }

    proptest! {
        #[test]
        fn psd_is_non_negative_and_parseval_holds_exactly_for_rectangular_no_overlap(
            x in proptest::collection::vec(-1e3f64..1e3, 256..1024),
        ) {
            let seg = 64;
            let s = psd(&x, 1e-6, seg, 0.0, Window::Rectangular, PsdUnits::Force).unwrap();
            prop_assert!(s.psd.iter().all(|&p| p >= 0.0));
            // With disjoint rectangular segments the PSD sums to the
            // average per-segment variance.
            let mut var = 0.0;
            let segs = x.len() / seg;
            for k in 0..segs {
                let sgm = &x[k * seg..(k + 1) * seg];
                let m = sgm.iter().sum::<f64>() / seg as f64;
                var += sgm.iter().map(|v| (v - m).powi(2)).sum::<f64>() / seg as f64;
            }
            var /= segs as f64;
            prop_assert!((s.total_power() - var).abs() <= 1e-9 * var.max(1e-12));
        }
    }
}
