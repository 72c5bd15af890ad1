//! Tone calibration and SNR on simulated photocurrents.

use std::f64::consts::PI;

use optomech_core::defaults::{self, PROBE_LABEL};
use optomech_core::model::{ReferenceTone, ValidConfig};
use optomech_core::sim::{integrate, Channels, SimPlan, Trajectory};
use optomech_core::spectral::{
    calibrate_displacement, line_power, local_peak, psd_at_rbw, resonance_exclusions, snr, Provenance, PsdUnits, Spectrum,
};
use optomech_core::steady_state::operating_point;

fn with_tone(cfg: &ValidConfig, depth_hz: f64) -> ValidConfig {
    cfg.with(|c| c.drive.reference_tone = Some(ReferenceTone { omega: 2.0 * PI * 40e6, depth: 2.0 * PI * depth_hz }))
        .unwrap()
}

fn calibrated(cfg: &ValidConfig, traj: &Trajectory) -> Spectrum {
    let mut s = psd_at_rbw(&traj.photocurrent, traj.sample_dt(), 10e3, PsdUnits::Photocurrent).unwrap();
    s.averaging_window_s = Some(traj.sample_dt());
    calibrate_displacement(&s, cfg, &operating_point(cfg).unwrap(), PROBE_LABEL).unwrap()
}

fn factor(s: &Spectrum) -> f64 {
    match s.provenance {
        Provenance::CalibratedByTone { factor } => factor,
        Provenance::Raw => panic!("uncalibrated"),
    }
}

#[test]
fn recovers_a_programmed_probe_oscillation() {
    // a nearly undamped probe rings at the amplitude it is given
    let cfg = with_tone(&defaults::paper_like(), 50e3)
        .with(|c| {
            c.drive.power = 40e-6;
            c.environment.temperature = 0.0;
            let probe = c.mechanics.iter_mut().find(|m| m.label == PROBE_LABEL).unwrap();
            probe.gamma_m = 2.0 * PI * 10.0;
        })
        .unwrap();
    let plan = SimPlan {
        thermal_initial: false,
        initial_displacement: vec![(PROBE_LABEL.into(), 1e-13)],
        channels: Channels { positions: true, photocurrent: true, ..Channels::NONE },
        ..SimPlan::new(&cfg, 2e-3, 4)
    };
    let traj = integrate(&cfg, &plan).unwrap();
    let j = traj.mode_index(PROBE_LABEL).unwrap();
    let truth = psd_at_rbw(&traj.x[j], traj.sample_dt(), 10e3, PsdUnits::Displacement).unwrap();
    let f = local_peak(&truth, 28.6e6).unwrap().freq;
    let x0 = (2.0 * line_power(&truth, f).unwrap()).sqrt();
    let recovered = (2.0 * line_power(&calibrated(&cfg, &traj), f).unwrap()).sqrt();
    println!("amplitude {x0:.4e} m, recovered {recovered:.4e} m");
    assert!((x0 - 1e-13).abs() < 0.1e-13);
    assert!((recovered / x0 - 1.0).abs() < 0.03);
}

#[test]
fn factor_does_not_depend_on_tone_depth() {
    let base = defaults::paper_like().with(|c| c.drive.power = 40e-6).unwrap();
    let factors: Vec<f64> = [50e3, 500e3]
        .iter()
        .map(|&depth| {
            let cfg = with_tone(&base, depth);
            let plan = SimPlan { channels: Channels { photocurrent: true, ..Channels::NONE }, ..SimPlan::new(&cfg, 1e-3, 9) };
            factor(&calibrated(&cfg, &integrate(&cfg, &plan).unwrap()))
        })
        .collect();
    println!("factors {factors:?}");
    assert!((factors[1] / factors[0] - 1.0).abs() < 0.02);
}

#[test]
fn probe_snr_rises_with_power_below_threshold() {
    let base = with_tone(&defaults::paper_like(), 50e3);
    let exclusions = resonance_exclusions(&base);
    let mut last = f64::NEG_INFINITY;
    for p in [5e-6, 10e-6, 20e-6, 30e-6, 45e-6] {
        let cfg = base.with(|c| c.drive.power = p).unwrap();
        let plan = SimPlan { channels: Channels { photocurrent: true, ..Channels::NONE }, ..SimPlan::new(&cfg, 2e-3, 21) };
        let spec = calibrated(&cfg, &integrate(&cfg, &plan).unwrap());
        let r = snr(&spec, (28.4e6, 28.8e6), (23.5e6, 25.5e6), &exclusions).unwrap();
        println!("{:.0} µW: {:.2} dB, {:.3e} m/√Hz", p * 1e6, r.snr_db, r.sensitivity.unwrap());
        assert!(r.snr_db > last, "SNR fell at {p} W");
        last = r.snr_db;
    }
}
