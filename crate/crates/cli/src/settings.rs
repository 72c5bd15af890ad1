//! Scenario settings, read from the same `key = value` file as the
//! physical system.
//!
//! | key | meaning |
//! |-----|---------|
//! | `scenario.unstable_mode`, `scenario.probe_mode` | mode labels |
//! | `scenario.rbw_kHz` | spectral resolution |
//! | `scenario.signal_band_MHz`, `scenario.floor_band_MHz` | probe SNR bands, `lo, hi` |
//! | `sim.duration_ms`, `sim.transient_skip_ms` | `simulate` run length |
//! | `sim.shot_noise` | `true`/`false` |
//! | `sim.feedback` | `off`, `config` or `critical` |
//! | `sim.csv_max_rows` | larger trajectories are written in binary only |
//! | `threshold.fractions` | time-domain powers, in units of the threshold |
//! | `sweep.fractions` | sweep powers, in units of the threshold |
//! | `sweep.measure_ms`, `sweep.map_max_MHz` | analysis window, color-map span |
//! | `calibrate.power_uW`, `calibrate.duration_ms`, `calibrate.depth_factor` | tone-depth check |
//! | `calibrate.floor_power_uW`, `calibrate.floor_duration_ms` | floor-scaling runs |
//! | `suppress.power_uW`, `suppress.duration_ms`, `suppress.window_ms` | headline run |
//! | `suppress.min_improvement` | required sensitivity ratio |

use std::str::FromStr;

use optomech_core::config::{system_from_document, Document};
use optomech_core::model::ValidConfig;

use crate::error::{RunError, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    Off,
    /// Use the chain exactly as configured.
    Config,
    /// Retune the configured chain to the critical gain of the unstable mode.
    Critical,
}

impl FromStr for FeedbackMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(FeedbackMode::Off),
            "config" => Ok(FeedbackMode::Config),
            "critical" => Ok(FeedbackMode::Critical),
            _ => Err("expected off, config or critical".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub system: ValidConfig,
    pub seed: u64,
    /// Sorted config text without the seed, for hashing.
    pub canonical: String,
    pub unstable_mode: String,
    pub probe_mode: String,
    pub rbw_hz: f64,
    pub signal_band: (f64, f64),
    pub floor_band: (f64, f64),

    pub sim_duration: f64,
    pub sim_transient: f64,
    pub sim_shot_noise: bool,
    pub sim_feedback: FeedbackMode,
    pub sim_csv_max_rows: usize,

    pub threshold_fractions: Vec<f64>,

    pub sweep_fractions: Vec<f64>,
    pub sweep_measure: f64,
    pub sweep_map_max_hz: f64,

    pub calibrate_power: f64,
    pub calibrate_duration: f64,
    pub calibrate_depth_factor: f64,
    pub floor_powers: Vec<f64>,
    pub floor_duration: f64,

    pub suppress_power: f64,
    pub suppress_duration: f64,
    pub suppress_window: f64,
    pub min_improvement: f64,
}

fn or<T: FromStr>(doc: &mut Document, key: &str, default: T) -> RunResult<T>
where
    T::Err: std::fmt::Display,
{
    Ok(doc.get(key)?.unwrap_or(default))
}

fn list(doc: &mut Document, key: &str, default: &[f64]) -> RunResult<Vec<f64>> {
    let v = doc.get_list(key)?.unwrap_or_else(|| default.to_vec());
    if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(RunError::Config(format!("{key} must be a list of positive numbers")));
    }
    Ok(v)
}

fn band(doc: &mut Document, key: &str, default: (f64, f64)) -> RunResult<(f64, f64)> {
    let v = list(doc, key, &[default.0, default.1])?;
    match v[..] {
        [lo, hi] if lo < hi => Ok((lo * 1e6, hi * 1e6)),
        _ => Err(RunError::Config(format!("{key} must be `lo, hi` with lo < hi"))),
    }
}

fn positive(key: &str, v: f64) -> RunResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(RunError::Config(format!("{key} must be positive (got {v})")))
    }
}

impl Settings {
    /// Parse a config file, apply `key=value` overrides and an optional
    /// seed. Overrides may only replace keys present in the file, and every
    /// key in the result must be understood.
    pub fn load(text: &str, overrides: &[(String, String)], seed: Option<u64>) -> RunResult<Settings> {
        let mut doc = Document::parse(text)?;
        for (k, v) in overrides {
            if !doc.contains(k) {
                return Err(RunError::Config(format!("override {k:?} does not name a key of the config file")));
            }
            doc.set(k, v)?;
        }
        if let Some(s) = seed {
            doc.set("rng_seed", &s.to_string())?;
        }
        let canonical: String = doc.canonical().lines().filter(|l| !l.starts_with("rng_seed ")).map(|l| format!("{l}\n")).collect();
        let system = system_from_document(&mut doc)?;
        let ms = 1e-3;

        let s = Settings {
            seed: system.rng_seed,
            canonical,
            unstable_mode: or(&mut doc, "scenario.unstable_mode", "crown14".to_string())?,
            probe_mode: or(&mut doc, "scenario.probe_mode", "probe".to_string())?,
            rbw_hz: positive("scenario.rbw_kHz", or(&mut doc, "scenario.rbw_kHz", 10.0)?)? * 1e3,
            signal_band: band(&mut doc, "scenario.signal_band_MHz", (28.4, 28.8))?,
            floor_band: band(&mut doc, "scenario.floor_band_MHz", (23.5, 25.5))?,

            sim_duration: positive("sim.duration_ms", or(&mut doc, "sim.duration_ms", 2.0)?)? * ms,
            sim_transient: or(&mut doc, "sim.transient_skip_ms", 0.0)? * ms,
            sim_shot_noise: or(&mut doc, "sim.shot_noise", true)?,
            sim_feedback: or(&mut doc, "sim.feedback", FeedbackMode::Config)?,
            sim_csv_max_rows: or(&mut doc, "sim.csv_max_rows", 100_000)?,

            threshold_fractions: list(&mut doc, "threshold.fractions", &[0.5, 0.75, 0.9, 1.25, 1.5])?,

            sweep_fractions: list(&mut doc, "sweep.fractions", &[0.25, 0.5, 0.75, 0.9, 1.25, 2.0, 3.0, 4.0])?,
            sweep_measure: positive("sweep.measure_ms", or(&mut doc, "sweep.measure_ms", 3.0)?)? * ms,
            sweep_map_max_hz: positive("sweep.map_max_MHz", or(&mut doc, "sweep.map_max_MHz", 60.0)?)? * 1e6,

            calibrate_power: positive("calibrate.power_uW", or(&mut doc, "calibrate.power_uW", 40.0)?)? * 1e-6,
            calibrate_duration: positive("calibrate.duration_ms", or(&mut doc, "calibrate.duration_ms", 1.0)?)? * ms,
            calibrate_depth_factor: positive("calibrate.depth_factor", or(&mut doc, "calibrate.depth_factor", 10.0)?)?,
            floor_powers: list(&mut doc, "calibrate.floor_power_uW", &[5.0, 10.0, 20.0, 40.0])?
                .into_iter()
                .map(|p| p * 1e-6)
                .collect(),
            floor_duration: positive("calibrate.floor_duration_ms", or(&mut doc, "calibrate.floor_duration_ms", 3.0)?)? * ms,

            suppress_power: positive("suppress.power_uW", or(&mut doc, "suppress.power_uW", 160.0)?)? * 1e-6,
            suppress_duration: positive("suppress.duration_ms", or(&mut doc, "suppress.duration_ms", 8.0)?)? * ms,
            suppress_window: positive("suppress.window_ms", or(&mut doc, "suppress.window_ms", 3.0)?)? * ms,
            min_improvement: or(&mut doc, "suppress.min_improvement", 2.0)?,
            system,
        };
        doc.finish()?;
        s.system.mode(&s.unstable_mode)?;
        s.system.mode(&s.probe_mode)?;
        if s.suppress_window >= s.suppress_duration {
            return Err(RunError::Config("suppress.window_ms must be shorter than suppress.duration_ms".into()));
        }
        if s.signal_band.0 < s.floor_band.1 && s.floor_band.0 < s.signal_band.1 {
            return Err(RunError::Config("signal and floor bands overlap".into()));
        }
        Ok(s)
    }

    /// The system at another drive power.
    pub fn at_power(&self, power: f64) -> RunResult<ValidConfig> {
        Ok(self.system.with(|c| c.drive.power = power)?)
    }
}
