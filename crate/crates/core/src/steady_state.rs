//! Static mean-field problem: intracavity amplitude, radiation-pressure
//! displacements and effective detuning, including the multistable regime.
//!
//! With `ȧ = 0` and `ẍ = ẋ = 0` the photon number obeys the cubic
//!
//! ```text
//! n [γ² + (Δ₀ + κ n)²] = 2 γ_in |a_in|²,    κ = Σ_j ħ g_j² / (m_j ω_j²)
//! ```
//!
//! which is solved in closed form in the scaled variable `y = κ n / γ`
//! and then polished by Newton iteration.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ValidConfig;
use crate::units::HBAR;

/// Relative residual every returned branch must meet.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// Complex intracavity amplitude (√photons).
    pub a_bar: Complex64,
    /// Intracavity photon number |ā|².
    pub n_bar: f64,
    /// Static displacement of each mechanical mode (m), in config order.
    pub x_bar: Vec<f64>,
    /// Effective detuning Δ = Δ₀ + Σ g_j x̄_j (rad/s).
    pub delta_eff: f64,
    /// Positive slope of the static residual.
    pub stable: bool,
    /// Position in the ascending-`n_bar` branch list.
    pub index: usize,
}

/// Result of the mean-field solve.
#[derive(Debug, Clone)]
pub struct MeanField {
    pub branches: Vec<SteadyState>,
    /// Set when two roots of the cubic merge (saddle-node edge case).
    pub degenerate: bool,
}

struct Scaled {
    delta: f64,
    s: f64,
}

impl Scaled {
    fn residual(&self, y: f64) -> f64 {
        let d = self.delta + y;
        y * (1.0 + d * d) - self.s
    }

    fn slope(&self, y: f64) -> f64 {
        let d = self.delta + y;
        1.0 + d * d + 2.0 * y * d
    }
}

/// Total static pull κ = Σ ħ g²/(m ω²) (rad/s per photon).
pub fn static_pull(config: &ValidConfig) -> f64 {
    config.mechanics.iter().map(|m| m.static_pull()).sum()
}

/// Real roots of y³ + b y² + c y + d = 0, unpolished.
fn cubic_real_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let disc_scale = q * q / 4.0 + (p * p * p / 27.0).abs();
    let mut roots = if p != 0.0 && disc.abs() <= 1e-9 * disc_scale {
        // double root
        let double = -3.0 * q / (2.0 * p) - shift;
        vec![3.0 * q / p - shift, double, double]
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    };
    roots.sort_by(|a, b| a.total_cmp(b));
    roots
}

fn polish(eq: &Scaled, mut y: f64) -> f64 {
    for _ in 0..100 {
        let f = eq.residual(y);
        let df = eq.slope(y);
        if df == 0.0 {
            break;
        }
        let step = f / df;
        y -= step;
        if step.abs() <= 1e-16 * y.abs().max(1e-300) {
            break;
        }
    }
    y
}

/// Solve the static problem; every real, non-negative branch is returned,
/// sorted by photon number.
pub fn solve_mean_field(config: &ValidConfig) -> Result<MeanField> {
    let gamma = config.optical.gamma_total();
    let delta_0 = config.optical.delta_0;
    let source = 2.0 * config.optical.gamma_in * config.photon_flux();
    let kappa = static_pull(config);

    let mut degenerate = false;
    let photon_numbers: Vec<(f64, bool)> = if source == 0.0 {
        vec![(0.0, true)]
    } else if kappa == 0.0 {
        vec![(source / (gamma * gamma + delta_0 * delta_0), true)]
    } else {
        let eq = Scaled {
            delta: delta_0 / gamma,
            s: source * kappa / (gamma * gamma * gamma),
        };
        let raw = cubic_real_roots(2.0 * eq.delta, 1.0 + eq.delta * eq.delta, -eq.s);
        let mut ys: Vec<f64> = Vec::with_capacity(3);
        for r in raw {
            let y = polish(&eq, r);
            if let Some(prev) = ys.last() {
                if (y - prev).abs() <= 1e-6 * y.abs().max(1e-300) {
                    degenerate = true;
                    continue;
                }
            }
            ys.push(y);
        }
        let mut out = Vec::with_capacity(ys.len());
        for y in ys {
            let rel = eq.residual(y).abs() / eq.s;
            if rel > RESIDUAL_TOLERANCE && !degenerate {
                return Err(Error::NoConvergence { residual: rel, tolerance: RESIDUAL_TOLERANCE });
            }
            if y >= 0.0 {
                out.push((gamma * y / kappa, eq.slope(y) > 0.0));
            }
        }
        out
    };
    if degenerate {
        log::warn!("mean-field cubic has a double root; reporting {} branches", photon_numbers.len());
    }

    let a_in = config.photon_flux().sqrt();
    let drive = (2.0 * config.optical.gamma_in).sqrt() * a_in;
    let branches = photon_numbers
        .into_iter()
        .enumerate()
        .map(|(index, (n_bar, stable))| {
            let x_bar: Vec<f64> = config
                .mechanics
                .iter()
                .map(|m| HBAR * m.coupling_g * n_bar / (m.mass * m.omega_m * m.omega_m))
                .collect();
            let delta_eff = delta_0
                + config.mechanics.iter().zip(&x_bar).map(|(m, x)| m.coupling_g * x).sum::<f64>();
            let a_bar = Complex64::new(drive, 0.0) / Complex64::new(gamma, -delta_eff);
            SteadyState { a_bar, n_bar, x_bar, delta_eff, stable, index }
        })
        .collect();
    Ok(MeanField { branches, degenerate })
}

impl MeanField {
    /// Pick the operating branch: the configured index if given, otherwise
    /// the unique stable branch.
    pub fn select(self, requested: Option<usize>) -> Result<SteadyState> {
        let count = self.branches.len();
        if let Some(i) = requested {
            return self
                .branches
                .into_iter()
                .nth(i)
                .ok_or_else(|| Error::Branch(format!("index {i} out of range ({count} branches)")));
        }
        let stable: Vec<_> = self.branches.into_iter().filter(|b| b.stable).collect();
        match stable.len() {
            1 => Ok(stable.into_iter().next().unwrap()),
            0 => Err(Error::Branch("no stable branch".into())),
            k => Err(Error::Branch(format!("{k} stable branches; set `branch` explicitly"))),
        }
    }
}

/// Solve and select the operating branch in one call.
pub fn operating_point(config: &ValidConfig) -> Result<SteadyState> {
    solve_mean_field(config)?.select(config.branch)
}

/// Residual of the field equation (γ − iΔ)ā − √(2γ_in) a_in.
pub fn field_residual(config: &ValidConfig, state: &SteadyState) -> f64 {
    let gamma = config.optical.gamma_total();
    let drive = (2.0 * config.optical.gamma_in * config.photon_flux()).sqrt();
    (Complex64::new(gamma, -state.delta_eff) * state.a_bar - drive).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmittedField {
    pub a_out: Complex64,
    /// Mean photocurrent |ā_out|² (photons/s).
    pub i_bar: f64,
}

/// Output field with the convention a_out = a_in − √(2γ_in) a.
pub fn transmitted_mean_field(state: &SteadyState, config: &ValidConfig) -> TransmittedField {
    let a_in = config.photon_flux().sqrt();
    let a_out = a_in - (2.0 * config.optical.gamma_in).sqrt() * state.a_bar;
    TransmittedField { a_out, i_bar: a_out.norm_sqr() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;

    fn base() -> ValidConfig {
        defaults::paper_like()
    }

    #[test]
    fn linear_cavity_on_resonance() {
        let cfg = base()
            .with(|c| {
                c.optical.delta_0 = 0.0;
                for m in &mut c.mechanics {
                    m.coupling_g = 0.0;
                }
            })
            .unwrap();
        let mf = solve_mean_field(&cfg).unwrap();
        assert_eq!(mf.branches.len(), 1);
        let gamma = cfg.optical.gamma_total();
        let expected = 2.0 * cfg.optical.gamma_in * cfg.photon_flux() / (gamma * gamma);
        assert!((mf.branches[0].n_bar / expected - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_power() {
        let cfg = base().with(|c| c.drive.power = 0.0).unwrap();
        let mf = solve_mean_field(&cfg).unwrap();
        assert_eq!(mf.branches.len(), 1);
        assert_eq!(mf.branches[0].n_bar, 0.0);
        assert!(mf.branches[0].x_bar.iter().all(|&x| x == 0.0));
    }

    /// Brute-force oracle: count sign changes of the unscaled residual on a
    /// dense logarithmic photon-number grid.
    fn brute_force_roots(cfg: &ValidConfig) -> Vec<(f64, bool)> {
        let gamma = cfg.optical.gamma_total();
        let d0 = cfg.optical.delta_0;
        let kappa = static_pull(cfg);
        let s = 2.0 * cfg.optical.gamma_in * cfg.photon_flux();
        let f = |n: f64| n * (gamma * gamma + (d0 + kappa * n).powi(2)) - s;
        let n_max = s / (gamma * gamma) * 1.000_001;
        let steps = 2_000_000;
        let mut out = Vec::new();
        let mut prev_n = 0.0;
        let mut prev_f = f(0.0);
        for k in 1..=steps {
            let n = n_max * k as f64 / steps as f64;
            let fk = f(n);
            if prev_f.signum() != fk.signum() {
                out.push((0.5 * (n + prev_n), fk > prev_f));
            }
            prev_n = n;
            prev_f = fk;
        }
        out
    }

    /// Drive power giving scaled source `s` in y(1 + (δ + y)²) = s.
    fn power_for_scaled_source(cfg: &ValidConfig, s: f64) -> f64 {
        let gamma = cfg.optical.gamma_total();
        let source = s * gamma.powi(3) / static_pull(cfg);
        source / (2.0 * cfg.optical.gamma_in) * HBAR * cfg.optical.omega_laser
    }

    fn bistable() -> ValidConfig {
        // Red side (Δ₀ < -√3 γ). For δ = -4 the folds sit at s ≈ 3.94 and
        // s ≈ 10.88; s = 7 is well inside the hysteresis loop.
        let cfg = base();
        let power = power_for_scaled_source(&cfg, 7.0);
        cfg.with(|c| {
            c.optical.delta_0 = -4.0 * c.optical.gamma_total();
            c.drive.power = power;
        })
        .unwrap()
    }

    #[test]
    fn bistable_branches_match_brute_force() {
        let cfg = bistable();
        let oracle = brute_force_roots(&cfg);
        assert_eq!(oracle.len(), 3, "oracle {oracle:?}");
        let mf = solve_mean_field(&cfg).unwrap();
        assert_eq!(mf.branches.len(), 3);
        for (b, (n, rising)) in mf.branches.iter().zip(&oracle) {
            assert!((b.n_bar / n - 1.0).abs() < 1e-3, "{} vs {}", b.n_bar, n);
            assert_eq!(b.stable, *rising);
        }
        assert!(mf.branches[0].stable && !mf.branches[1].stable && mf.branches[2].stable);
        assert!(mf.clone().select(None).is_err());
        assert_eq!(mf.select(Some(2)).unwrap().index, 2);
    }

    #[test]
    fn branches_satisfy_fixed_point() {
        for cfg in [base(), bistable()] {
            for b in solve_mean_field(&cfg).unwrap().branches {
                let scale = (2.0 * cfg.optical.gamma_in * cfg.photon_flux()).sqrt();
                assert!(field_residual(&cfg, &b) <= 1e-12 * scale);
                assert!((b.a_bar.norm_sqr() / b.n_bar - 1.0).abs() < 1e-12);
                for (m, x) in cfg.mechanics.iter().zip(&b.x_bar) {
                    let expect = HBAR * m.coupling_g * b.n_bar / (m.mass * m.omega_m.powi(2));
                    assert!((x / expect - 1.0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn critical_coupling_on_resonance_extinguishes_transmission() {
        let cfg = base()
            .with(|c| {
                c.optical.delta_0 = 0.0;
                for m in &mut c.mechanics {
                    m.coupling_g = 0.0;
                }
            })
            .unwrap();
        let s = operating_point(&cfg).unwrap();
        let t = transmitted_mean_field(&s, &cfg);
        assert!(t.a_out.norm() < 1e-9 * cfg.photon_flux().sqrt());
    }

    #[test]
    fn uncoupled_cavity_transmits_everything() {
        let cfg = base().with(|c| c.optical.gamma_in = 0.0).unwrap();
        let s = operating_point(&cfg).unwrap();
        let t = transmitted_mean_field(&s, &cfg);
        assert_eq!(t.i_bar, cfg.photon_flux());
    }

    #[test]
    fn far_detuned_transmission_approaches_input() {
        let cfg = base()
            .with(|c| c.optical.delta_0 = 100.0 * (c.optical.gamma_in + c.optical.gamma_0))
            .unwrap();
        let s = operating_point(&cfg).unwrap();
        let t = transmitted_mean_field(&s, &cfg);
        assert!((t.i_bar / cfg.photon_flux() - 1.0).abs() < 0.01);
    }

    #[test]
    fn energy_balance() {
        for cfg in [base(), bistable()] {
            for b in solve_mean_field(&cfg).unwrap().branches {
                let t = transmitted_mean_field(&b, &cfg);
                let lhs = 2.0 * cfg.optical.gamma_0 * b.n_bar + t.i_bar;
                assert!((lhs / cfg.photon_flux() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weak_coupling_limit_is_lorentzian() {
        let lorentz = {
            let cfg = base();
            let g = cfg.optical.gamma_total();
            2.0 * cfg.optical.gamma_in * cfg.photon_flux() / (g * g + cfg.optical.delta_0.powi(2))
        };
        let mut last = f64::INFINITY;
        for scale in [1e-1, 1e-2, 1e-3, 1e-4] {
            let cfg = base()
                .with(|c| c.mechanics.iter_mut().for_each(|m| m.coupling_g *= scale))
                .unwrap();
            let n = operating_point(&cfg).unwrap().n_bar;
            let err = (n / lorentz - 1.0).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn double_root_reported_as_two_branches() {
        // Scaled cubic y(1 + (δ + y)²) = s touches zero slope at the saddle
        // node; choose s exactly at the fold for δ = -4.
        let delta: f64 = -4.0;
        // slope 3y² + 4δy + 1 + δ² = 0 → lower-n fold root.
        let disc = (16.0 * delta * delta - 12.0 * (1.0 + delta * delta)).sqrt();
        let y_fold = (-4.0 * delta + disc) / 6.0;
        let s_fold = y_fold * (1.0 + (delta + y_fold).powi(2));
        let cfg0 = base();
        let gamma = cfg0.optical.gamma_total();
        let power = power_for_scaled_source(&cfg0, s_fold);
        let cfg = cfg0
            .with(|c| {
                c.optical.delta_0 = delta * gamma;
                c.drive.power = power;
            })
            .unwrap();
        let mf = solve_mean_field(&cfg).unwrap();
        assert!(mf.degenerate);
        assert_eq!(mf.branches.len(), 2);
    }
}
