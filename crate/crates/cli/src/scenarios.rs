//! The six named scenarios. Each writes its files through [`Outputs`] and
//! records pass/fail checks; a failed check ends the run with exit code 4.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde_json::{json, Value};

use optomech_core::linear_response::{
    bare_susceptibility, critical_gain, effective_params, modified_susceptibility, transduction_transfer, Gain,
};
use optomech_core::response::default_grid;
use optomech_core::signal_chain::{chain_frequency_response, ChainDesign};
use optomech_core::sim::{self, integrate_from, limit_cycle, SimPlan};
use optomech_core::spectral::{calibrate_displacement, psd_at_rbw, sql, PsdUnits};
use optomech_core::steady_state::operating_point;
use optomech_core::Error;

use crate::error::{RunError, RunResult};
use crate::experiments::{self as ex, GrowthPoint, SweepRow};
use crate::manifest::Check;
use crate::output::{spectrogram_csv, FileKind, Outputs, SweepResult};
use crate::settings::{FeedbackMode, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    /// Closed-form responses, critical gain and threshold.
    Analyze,
    /// Threshold power by bisection and by time-domain growth rates.
    Threshold,
    /// One time-domain run at the configured power.
    Simulate,
    /// Probe SNR against power, feedback on and off.
    Sweep,
    /// Tone calibration consistency and shot-noise floor scaling.
    Calibrate,
    /// Supra-threshold run with feedback off, then on.
    Suppress,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Analyze => "analyze",
            Scenario::Threshold => "threshold",
            Scenario::Simulate => "simulate",
            Scenario::Sweep => "sweep",
            Scenario::Calibrate => "calibrate",
            Scenario::Suppress => "suppress",
        }
    }
}

/// Paper-quoted SQL of the probe mode (m/√Hz), recomputed and compared in
/// `analyze`.
pub const QUOTED_SQL: f64 = 8e-21;

pub struct Run<'a> {
    pub settings: &'a Settings,
    pub out: &'a mut Outputs,
    pub checks: Vec<Check>,
    pub workers: usize,
}

impl Run<'_> {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        log::info!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    fn pool(&self) -> RunResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| RunError::Numeric(format!("worker pool: {e}")))
    }

    pub fn execute(&mut self, scenario: Scenario) -> RunResult<()> {
        match scenario {
            Scenario::Analyze => self.analyze(),
            Scenario::Threshold => self.threshold(),
            Scenario::Simulate => self.simulate(),
            Scenario::Sweep => self.sweep(),
            Scenario::Calibrate => self.calibrate(),
            Scenario::Suppress => self.suppress(),
        }?;
        let failed: Vec<String> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(RunError::Assertion(failed))
        }
    }

    fn analyze(&mut self) -> RunResult<()> {
        let s = self.settings;
        let cfg = &s.system;
        let state = operating_point(cfg)?;
        let dt = SimPlan::max_dt(cfg) * (1.0 - 1e-9);
        let configured = if cfg.feedback.enabled { Gain::Chain(ChainDesign::new(&cfg.feedback, dt)?) } else { Gain::Zero };
        let resonances: Vec<(f64, f64)> = cfg.mechanics.iter().map(|m| (m.omega_m, m.gamma_m)).collect();
        let mut modes = Vec::new();
        for m in &cfg.mechanics {
            let grid = default_grid(m.omega_m, &resonances);
            let files = [
                ("chi0", bare_susceptibility(m, &grid)?),
                ("chi", modified_susceptibility(cfg, &state, m, &configured, &grid)?),
                ("gcrit", critical_gain(cfg, m, &grid)?),
                ("transduction", transduction_transfer(cfg, &state, m, &grid)?),
            ];
            for (name, r) in &files {
                self.out.write(&format!("{name}_{}.csv", m.label), FileKind::Analysis, r.to_csv().as_bytes())?;
            }
            if cfg.feedback.enabled {
                let chain = chain_frequency_response(&cfg.feedback, dt, &grid)?;
                self.out.write(&format!("chain_{}.csv", m.label), FileKind::Analysis, chain.to_csv().as_bytes())?;
            }
            let eff = effective_params(cfg, &state, &configured, &m.label)?;
            let bare = effective_params(cfg, &state, &Gain::Zero, &m.label)?;
            let threshold = match ex::threshold(cfg, &m.label) {
                Ok(t) => json!({ "power_W": t.power, "bracket_W": [t.bracket.0, t.bracket.1] }),
                Err(RunError::Numeric(msg)) => json!({ "none": msg }),
                Err(e) => return Err(e),
            };
            let g = ex::gcrit_at_resonance(cfg, &m.label)?.values()[0];
            modes.push(json!({
                "label": m.label,
                "gamma_eff_rad_s": eff.gamma_eff,
                "omega_eff_rad_s": eff.omega_eff,
                "unstable": eff.is_unstable,
                "gamma_eff_no_feedback_rad_s": bare.gamma_eff,
                "threshold": threshold,
                "gcrit_at_resonance_Ns": { "re": g.re, "im": g.im, "abs": g.norm(), "arg_deg": g.arg().to_degrees() },
                "sql_m_rtHz": sql(m),
            }));
        }

        let cancel = ex::cancellation_sweep(cfg)?;
        self.check("cancellation", cancel < 1e-12, format!("max |chi(Gcrit)/chi0 - 1| over 27 operating points = {cancel:.3e}"));
        let invariance = ex::gcrit_invariance(cfg, &s.unstable_mode)?;
        self.check("gcrit_invariance", invariance < 1e-9, format!("max relative change of Gcrit = {invariance:.3e}"));

        let (_, probe) = cfg.mode(&s.probe_mode)?;
        let base = sql(probe);
        let heavier = sql(&optomech_core::model::MechanicalMode { mass: 2.0 * probe.mass, ..probe.clone() });
        let broader = sql(&optomech_core::model::MechanicalMode { gamma_m: 2.0 * probe.gamma_m, ..probe.clone() });
        let scale_err = ((base / heavier) / SQRT_2 - 1.0).abs().max(((base / broader) / SQRT_2 - 1.0).abs());
        self.check("sql_scaling", scale_err <= 4.0 * f64::EPSILON, format!("sqrt(2) scaling error {scale_err:.1e}"));
        log::info!("probe SQL {base:.3e} m/rtHz; quoted {QUOTED_SQL:e} is {:.3} of it", QUOTED_SQL / base);

        let summary = json!({
            "steady_state": {
                "n_bar": state.n_bar,
                "delta_eff_rad_s": state.delta_eff,
                "x_bar_m": state.x_bar,
                "stable": state.stable,
            },
            "modes": modes,
            "cancellation_max_rel_error": cancel,
            "gcrit_max_rel_change": invariance,
            "sql": { "probe_m_rtHz": base, "quoted_m_rtHz": QUOTED_SQL, "quoted_over_computed": QUOTED_SQL / base },
        });
        self.out.write_json("analyze.json", FileKind::Analysis, &summary)
    }

    fn growth_points(&self, fractions: &[f64], threshold: f64) -> RunResult<Vec<GrowthPoint>> {
        let s = self.settings;
        self.pool()?.install(|| {
            fractions
                .par_iter()
                .enumerate()
                .map(|(k, f)| ex::growth_point(&s.system, &s.unstable_mode, f * threshold, s.seed.wrapping_add(k as u64)))
                .collect()
        })
    }

    fn threshold(&mut self) -> RunResult<()> {
        let s = self.settings;
        let th = ex::threshold(&s.system, &s.unstable_mode)?;
        let points = self.growth_points(&s.threshold_fractions, th.power)?;

        let mut csv = String::from("power_W,fraction,measured_rate_s,ci95_s,predicted_rate_s\n");
        for p in &points {
            csv.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", p.power, p.power / th.power, p.measured, p.ci95, p.predicted));
        }
        self.out.write("growth.csv", FileKind::Analysis, csv.as_bytes())?;

        let worst = points.iter().map(|p| ((p.measured - p.predicted) / p.predicted).abs()).fold(0.0, f64::max);
        self.check("growth_rates", worst < 0.02, format!("worst relative deviation from -gamma_eff/2: {worst:.3e}"));
        let crossing = ex::sign_change(&points);
        let (passed, detail) = match crossing {
            Some(p) => {
                let rel = (p / th.power - 1.0).abs();
                (rel < 0.02, format!("sign change at {p:.4e} W, bisection {:.4e} W, relative {rel:.3e}", th.power))
            }
            None => (false, "growth rate never changes sign over the requested powers".into()),
        };
        self.check("threshold_consistency", passed, detail);
        let summary = json!({
            "mode": s.unstable_mode,
            "threshold_W": th.power,
            "bracket_W": [th.bracket.0, th.bracket.1],
            "time_domain_crossing_W": crossing,
        });
        self.out.write_json("threshold.json", FileKind::Analysis, &summary)
    }

    fn simulate(&mut self) -> RunResult<()> {
        let s = self.settings;
        let cfg = match s.sim_feedback {
            FeedbackMode::Off => s.system.with(|c| c.feedback.enabled = false)?,
            FeedbackMode::Config => s.system.clone(),
            FeedbackMode::Critical => {
                let chain = ex::tuned_chain(&s.system, &s.unstable_mode)?;
                s.system.with(|c| c.feedback = chain)?
            }
        };
        let state = operating_point(&cfg)?;
        let plan = SimPlan {
            transient_skip: s.sim_transient,
            shot_noise: s.sim_shot_noise,
            ..SimPlan::new(&cfg, s.sim_duration, s.seed)
        };
        let traj = integrate_from(&cfg, &state, &plan)?;

        let mut bin = Vec::new();
        sim::write_binary(&traj, &mut bin)?;
        self.out.write("trajectory.bin", FileKind::Stochastic, &bin)?;
        if traj.len() <= s.sim_csv_max_rows {
            let mut text = Vec::new();
            sim::write_csv(&traj, &mut text)?;
            self.out.write("trajectory.csv", FileKind::Stochastic, &text)?;
        } else {
            log::info!("{} records exceed sim.csv_max_rows; trajectory written in binary only", traj.len());
        }

        let raw = ex::current_spectrum(&traj, 0, s.rbw_hz)?;
        self.out.write("spectrum_photocurrent.csv", FileKind::Stochastic, raw.to_csv().as_bytes())?;
        let mut modes = Vec::new();
        for (j, m) in traj.modes.iter().enumerate() {
            let sx = psd_at_rbw(&traj.x[j], traj.sample_dt(), s.rbw_hz, PsdUnits::Displacement)?;
            self.out.write(&format!("spectrum_x_{}.csv", m.label), FileKind::Stochastic, sx.to_csv().as_bytes())?;
            let lc = match limit_cycle(&traj, &m.label) {
                Ok(r) => json!({ "amplitude_m": r.amplitude, "frequency_Hz": r.frequency, "gamma_ss_rad_s": r.gamma_ss }),
                Err(Error::NotSaturated(_)) | Err(Error::InsufficientData(_)) => Value::Null,
                Err(e) => return Err(e.into()),
            };
            let variance = traj.moments[j].variance();
            modes.push(json!({
                "label": m.label,
                "variance_m2": variance,
                "thermal_variance_m2": m.thermal_variance,
                "variance_ratio": if m.thermal_variance > 0.0 { json!(variance / m.thermal_variance) } else { Value::Null },
                "limit_cycle": lc,
            }));
        }
        let mut calibrated = Value::Null;
        if cfg.drive.reference_tone.is_some() {
            match calibrate_displacement(&raw, &cfg, &state, &s.probe_mode) {
                Ok(cal) => {
                    let factor = ex::calibration_factor(&cal);
                    self.out.write("spectrum_displacement.csv", FileKind::Stochastic, cal.to_csv().as_bytes())?;
                    calibrated = json!(factor);
                }
                Err(e @ Error::ToneNotFound(_)) => log::warn!("no calibrated spectrum: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
        let summary = json!({
            "power_W": cfg.drive.power,
            "feedback": cfg.feedback.enabled,
            "gain_mag_Ns": cfg.feedback.gain_mag,
            "phase_deg": cfg.feedback.phase_deg,
            "dt_s": traj.dt,
            "records": traj.len(),
            "n_bar": traj.n_bar,
            "modes": modes,
            "calibration_factor": calibrated,
        });
        self.out.write_json("simulate.json", FileKind::Report, &summary)
    }

    fn sweep(&mut self) -> RunResult<()> {
        let s = self.settings;
        let th = ex::threshold(&s.system, &s.unstable_mode)?;
        let chain = ex::tuned_chain(&s.at_power(th.power)?, &s.unstable_mode)?;
        let jobs: Vec<(usize, f64, bool)> = s
            .sweep_fractions
            .iter()
            .enumerate()
            .flat_map(|(k, f)| [(k, f * th.power, false), (k, f * th.power, true)])
            .collect();
        let results: Vec<(SweepRow, _)> = self.pool()?.install(|| {
            jobs.par_iter()
                .map(|&(k, p, on)| ex::sweep_point(s, &chain, p, on, s.seed.wrapping_add(k as u64)))
                .collect::<RunResult<Vec<_>>>()
        })?;
        let table = SweepResult::new(results.iter().map(|(r, _)| r.clone()).collect())?;
        self.out.write("sweep.csv", FileKind::Stochastic, table.to_csv().as_bytes())?;
        let map: Vec<(f64, bool, &_)> = results.iter().map(|(r, spec)| (r.power_w, r.feedback_on, spec)).collect();
        self.out.write("spectrogram.csv", FileKind::Stochastic, spectrogram_csv(&map, s.sweep_map_max_hz).as_bytes())?;

        let on: Vec<&SweepRow> = table.series(true).collect();
        let off: Vec<&SweepRow> = table.series(false).collect();
        let rising = on.windows(2).all(|w| w[1].snr_db > w[0].snr_db);
        let on_snr: Vec<String> = on.iter().map(|r| format!("{:.2}", r.snr_db)).collect();
        self.check("feedback_on_snr_rises", rising, format!("SNR with feedback (dB): {}", on_snr.join(", ")));
        let gaps: Vec<(f64, f64)> = on
            .iter()
            .zip(&off)
            .filter(|(_, o)| o.power_w > th.power)
            .map(|(a, b)| (a.power_w / th.power, a.snr_db - b.snr_db))
            .collect();
        let collapsed = !gaps.is_empty() && gaps.iter().all(|&(_, d)| d >= 3.0);
        let detail: Vec<String> = gaps.iter().map(|(f, d)| format!("{f:.2}x: {d:.2} dB")).collect();
        self.check("feedback_off_snr_collapses", collapsed, format!("on minus off above threshold: {}", detail.join(", ")));
        let summary = json!({
            "threshold_W": th.power,
            "chain": { "gain_mag_Ns": chain.gain_mag, "phase_deg": chain.phase_deg },
            "points": results.len(),
        });
        self.out.write_json("sweep.json", FileKind::Report, &summary)
    }

    fn calibrate(&mut self) -> RunResult<()> {
        let s = self.settings;
        let tone = ex::tone_consistency(s, s.seed)?;
        self.check(
            "tone_depth_independence",
            tone.relative_difference < 0.02,
            format!("factors {:.4e} and {:.4e}, relative difference {:.3e}", tone.factors[0], tone.factors[1], tone.relative_difference),
        );
        let (points, slope, spectra) = ex::floor_scaling(s, s.seed)?;
        let mut csv = String::from("power_W,floor_m2_per_Hz,snr_db\n");
        for (p, spec) in points.iter().zip(&spectra) {
            csv.push_str(&format!("{:e},{:e},{:e}\n", p.power_w, p.floor_m2_hz, p.snr_db));
            self.out.write(&format!("spectrum_{:.0}uW.csv", p.power_w * 1e6), FileKind::Stochastic, spec.to_csv().as_bytes())?;
        }
        self.out.write("floor.csv", FileKind::Stochastic, csv.as_bytes())?;
        self.check("floor_scaling", (slope + 1.0).abs() <= 0.1, format!("fitted exponent {slope:.4}"));
        let summary = json!({
            "tone_depths_Hz": tone.depths_hz,
            "calibration_factors_m2_per_s-2": tone.factors,
            "relative_difference": tone.relative_difference,
            "floor_exponent": slope,
        });
        self.out.write_json("calibrate.json", FileKind::Report, &summary)
    }

    fn suppress(&mut self) -> RunResult<()> {
        let s = self.settings;
        let r = ex::suppression(s, s.seed)?;
        for run in [&r.off, &r.on] {
            let tag = if run.feedback_on { "on" } else { "off" };
            self.out.write(&format!("spectrum_{tag}.csv"), FileKind::Stochastic, run.calibrated.to_csv().as_bytes())?;
            self.out.write(&format!("spectrum_{tag}_raw.csv"), FileKind::Stochastic, run.raw.to_csv().as_bytes())?;
        }
        let present = |run: &ex::RunSummary| -> Vec<usize> { run.harmonics.iter().filter(|h| h.order >= 2 && h.present).map(|h| h.order).collect() };

        let off_orders = present(&r.off);
        self.check(
            "saturation",
            r.off.limit_cycle.is_some() && off_orders == [2, 3, 4],
            format!(
                "limit cycle {}; harmonics above floor by 6 dB: {off_orders:?}",
                r.off.limit_cycle.as_ref().map_or("absent".to_string(), |l| format!("{:.3e} m", l.amplitude))
            ),
        );
        self.check(
            "intracavity_power_drops",
            r.off.photons_late < r.off.photons_early && r.off.photons_late < r.n_bar,
            format!("mean photons {:.4e} early, {:.4e} saturated, steady state {:.4e}", r.off.photons_early, r.off.photons_late, r.n_bar),
        );
        let on_orders = present(&r.on);
        self.check(
            "suppression",
            r.on.limit_cycle.is_none() && on_orders.is_empty(),
            format!("limit cycle {}; harmonics present: {on_orders:?}", if r.on.limit_cycle.is_some() { "present" } else { "absent" }),
        );
        self.check(
            "sensitivity_improvement",
            r.improvement > s.min_improvement,
            format!("off/on sensitivity ratio {:.3} (needs > {})", r.improvement, s.min_improvement),
        );
        let describe = |run: &ex::RunSummary| {
            json!({
                "snr_db": run.probe.snr_db,
                "sensitivity_m_rtHz": run.probe.sensitivity,
                "limit_cycle_amplitude_m": run.limit_cycle.as_ref().map(|l| l.amplitude),
                "harmonics_db": run.harmonics.iter().map(|h| 10.0 * (h.peak_psd / h.floor_psd).log10()).collect::<Vec<_>>(),
                "mean_photons_early": run.photons_early,
                "mean_photons_late": run.photons_late,
            })
        };
        let summary = json!({
            "power_W": r.power,
            "chain": { "gain_mag_Ns": r.chain.gain_mag, "phase_deg": r.chain.phase_deg },
            "feedback_off": describe(&r.off),
            "feedback_on": describe(&r.on),
            "improvement": r.improvement,
            "probe_frequency_Hz": s.system.mode(&s.probe_mode)?.1.omega_m / (2.0 * PI),
        });
        self.out.write_json("suppress.json", FileKind::Report, &summary)
    }
}

