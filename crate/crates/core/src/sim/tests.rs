use super::*;
use crate::defaults;

fn dark(cfg: &ValidConfig) -> ValidConfig {
    cfg.with(|c| c.drive.power = 0.0).unwrap()
}

#[test]
fn guard_relaxes_without_light() {
    let lit = defaults::paper_like();
    let off = dark(&lit);
    assert!(SimPlan::max_dt(&off) > 5.0 * SimPlan::max_dt(&lit));
    let mut plan = SimPlan::new(&lit, 1e-5, 1);
    assert!(plan.validate(&lit).is_ok());
    plan.dt *= 1.01;
    assert!(matches!(plan.validate(&lit), Err(Error::Plan(_))));
}

#[test]
fn short_runs_and_coarse_records_are_rejected() {
    let cfg = defaults::paper_like();
    let plan = SimPlan::new(&cfg, 1e-6, 1);
    assert!(plan.validate(&cfg).is_err());
    let plan = SimPlan { record_decimation: 10_000, ..SimPlan::new(&cfg, 1e-5, 1) };
    assert!(plan.validate(&cfg).is_err());
    let plan = SimPlan { initial_displacement: vec![("nope".into(), 1e-12)], ..SimPlan::new(&cfg, 1e-5, 1) };
    assert!(plan.validate(&cfg).is_err());
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = defaults::paper_like();
    let plan = SimPlan::new(&cfg, 8e-6, 42);
    let a = integrate(&cfg, &plan).unwrap();
    let b = integrate(&cfg, &plan).unwrap();
    assert_eq!(a, b);
    let c = integrate(&cfg, &SimPlan { seed: 43, ..plan }).unwrap();
    assert_ne!(a.x, c.x);
}

#[test]
fn undriven_oscillator_decays_at_half_the_damping() {
    let cfg = dark(&defaults::paper_like()).with(|c| c.environment.temperature = 0.0).unwrap();
    let (_, probe) = cfg.mode(defaults::PROBE_LABEL).unwrap();
    let plan = SimPlan {
        initial_displacement: vec![(defaults::PROBE_LABEL.into(), 1e-12)],
        ..SimPlan::new(&cfg, 15e-6, 1)
    };
    let traj = integrate(&cfg, &plan).unwrap();
    let g = growth_rate(&traj, defaults::PROBE_LABEL).unwrap();
    let expected = -probe.gamma_m / 2.0;
    assert!((g.rate / expected - 1.0).abs() < 0.01, "{} vs {expected}", g.rate);
    assert!(g.r_squared > 0.999);
}

#[test]
fn probe_mode_reaches_equipartition() {
    let cfg = dark(&defaults::paper_like());
    let (j, probe) = cfg.mode(defaults::PROBE_LABEL).unwrap();
    let duration = 7000.0 / probe.gamma_m;
    let plan = SimPlan { channels: Channels::NONE, ..SimPlan::new(&cfg, duration, 5) };
    let traj = integrate(&cfg, &plan).unwrap();
    let ratio = traj.moments[j].variance() / probe.thermal_variance(300.0);
    assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
}

#[test]
fn blow_up_guard_trips() {
    let cfg = defaults::paper_like();
    let plan = SimPlan { x_ceiling: 1e-16, ..SimPlan::new(&cfg, 8e-6, 1) };
    assert!(matches!(integrate(&cfg, &plan), Err(Error::BlowUp { .. })));
}

#[test]
fn refined_plan_keeps_record_times() {
    let cfg = defaults::paper_like();
    let coarse = SimPlan { noise_substeps: 2, ..SimPlan::new(&cfg, 8e-6, 3) };
    let fine = coarse.refined().unwrap();
    assert!(fine.validate(&cfg).is_ok());
    let a = integrate(&cfg, &coarse).unwrap();
    let b = integrate(&cfg, &fine).unwrap();
    assert_eq!(a.len(), b.len());
    assert!((a.t0 - b.t0).abs() < 1e-18);
    // same Wiener path: positions agree closely
    let (j, m) = cfg.mode(defaults::PROBE_LABEL).unwrap();
    let scale = m.thermal_variance(300.0).sqrt();
    let worst = a.x[j].iter().zip(&b.x[j]).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05 * scale, "{worst} vs {scale}");
}

#[test]
fn binary_round_trip_and_rejections() {
    let cfg = defaults::paper_like();
    let traj = integrate(&cfg, &SimPlan::new(&cfg, 8e-6, 9)).unwrap();
    let mut bytes = Vec::new();
    write_binary(&traj, &mut bytes).unwrap();
    let back = read_binary(&bytes[..]).unwrap();
    assert_eq!(back.x, traj.x);
    assert_eq!(back.field, traj.field);
    assert_eq!(back.photocurrent, traj.photocurrent);
    assert_eq!(back.moments, traj.moments);
    assert!(read_binary(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(read_binary(&extra[..]).is_err());
    assert!(read_binary(&b"optomech-trajectory 1\n"[..]).is_err());

    let mut csv = Vec::new();
    write_csv(&traj, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t_s,x:probe[m],x:crown14[m],v:probe[m/s]"));
    assert_eq!(text.lines().count(), traj.len() + 1);
}

#[test]
fn dark_propagator_is_the_rk4_step() {
    let cfg = dark(&defaults::paper_like());
    let params = Params::<1> {
        gamma: 1.0,
        delta_0: 0.0,
        drive: 0.0,
        optics: false,
        g: [0.0],
        gamma_m: [cfg.mechanics[0].gamma_m],
        omega_sq: [cfg.mechanics[0].omega_m.powi(2)],
        inv_mass: [1.0 / cfg.mechanics[0].mass],
    };
    let dt = SimPlan::max_dt(&cfg);
    let y = State::<1> { x: [3e-13], v: [-2e-5], ar: 0.0, ai: 0.0 };
    let k1 = params.deriv(&y, 0.0, 0.0);
    let k2 = params.deriv(&y.axpy(0.5 * dt, &k1), 0.0, 0.0);
    let k3 = params.deriv(&y.axpy(0.5 * dt, &k2), 0.0, 0.0);
    let k4 = params.deriv(&y.axpy(dt, &k3), 0.0, 0.0);
    let x = y.x[0] + dt / 6.0 * (k1.x[0] + 2.0 * (k2.x[0] + k3.x[0]) + k4.x[0]);
    let v = y.v[0] + dt / 6.0 * (k1.v[0] + 2.0 * (k2.v[0] + k3.v[0]) + k4.v[0]);
    let m = rk4_propagator(params.gamma_m[0], params.omega_sq[0], dt);
    assert!((m[0][0] * y.x[0] + m[0][1] * y.v[0] - x).abs() <= 1e-14 * x.abs());
    assert!((m[1][0] * y.x[0] + m[1][1] * y.v[0] - v).abs() <= 1e-14 * v.abs());
}
