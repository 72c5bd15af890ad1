//! Complex frequency-domain samples on an angular-frequency grid, plus the
//! CSV format they are exchanged in.
//!
//! ```text
//! # kind=susceptibility units=m/N
//! omega_rad_s,real,imag
//! 8.796459430051421e7,1.2e-3,-4.5e-2
//! ```

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    /// Displacement per force (m/N).
    Susceptibility,
    /// Photocurrent per displacement (s⁻¹/m).
    Transduction,
    /// Force per photocurrent (N·s).
    Gain,
}

impl ResponseKind {
    pub fn units(self) -> &'static str {
        match self {
            ResponseKind::Susceptibility => "m/N",
            ResponseKind::Transduction => "1/(s*m)",
            ResponseKind::Gain => "N*s",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResponseKind::Susceptibility => "susceptibility",
            ResponseKind::Transduction => "transduction",
            ResponseKind::Gain => "gain",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "susceptibility" => Some(ResponseKind::Susceptibility),
            "transduction" => Some(ResponseKind::Transduction),
            "gain" => Some(ResponseKind::Gain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    omega: Vec<f64>,
    values: Vec<Complex64>,
    kind: ResponseKind,
}

impl FrequencyResponse {
    pub fn new(omega: Vec<f64>, values: Vec<Complex64>, kind: ResponseKind) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::Format(format!(
                "grid has {} points but {} values",
                omega.len(),
                values.len()
            )));
        }
        if omega.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("grid must be strictly increasing".into()));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Format(format!("non-finite value at omega = {:e}", omega[i])));
        }
        Ok(FrequencyResponse { omega, values, kind })
    }

    /// Evaluate `f` on every grid point.
    pub fn from_fn(grid: &[f64], kind: ResponseKind, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = grid.iter().map(|&w| f(w)).collect();
        Self::new(grid.to_vec(), values, kind)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Largest pointwise relative difference |a − b| / |b|.
    pub fn max_relative_difference(&self, other: &FrequencyResponse) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm() / b.norm())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * self.len() + 64);
        let _ = writeln!(s, "# kind={} units={}", self.kind.name(), self.kind.units());
        s.push_str("omega_rad_s,real,imag\n");
        for (w, v) in self.omega.iter().zip(&self.values) {
            let _ = writeln!(s, "{w:e},{:e},{:e}", v.re, v.im);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty response file".into()))?;
        let kind = header
            .strip_prefix("# ")
            .and_then(|h| h.split_whitespace().find_map(|kv| kv.strip_prefix("kind=")))
            .and_then(ResponseKind::from_name)
            .ok_or_else(|| Error::Format(format!("bad units header {header:?}")))?;
        if lines.next() != Some("omega_rad_s,real,imag") {
            return Err(Error::Format("missing column header".into()));
        }
        let mut omega = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || -> Result<f64> {
                cols.next()
                    .ok_or_else(|| Error::Format(format!("row {}: missing column", n + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", n + 1)))
            };
            let (w, re, im) = (next()?, next()?, next()?);
            if cols.next().is_some() {
                return Err(Error::Format(format!("row {}: extra columns", n + 1)));
            }
            omega.push(w);
            values.push(Complex64::new(re, im));
        }
        Self::new(omega, values, kind)
    }
}

/// Uniform grid of `points` samples over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| lo + step * k as f64).collect()
}

/// Default analysis grid around a resonance: [0.5 ω_m, 1.5 ω_m] with 4096
/// points, refined eightfold within ±10 linewidths of every listed
/// resonance `(omega, linewidth)` that falls inside the span.
pub fn default_grid(omega_m: f64, resonances: &[(f64, f64)]) -> Vec<f64> {
    let (lo, hi) = (0.5 * omega_m, 1.5 * omega_m);
    let base = linear_grid(lo, hi, 4096);
    let step = base[1] - base[0];
    let mut grid = base.clone();
    for &(w0, lw) in resonances {
        let (a, b) = ((w0 - 10.0 * lw).max(lo), (w0 + 10.0 * lw).min(hi));
        if a >= b {
            continue;
        }
        let fine = step / 8.0;
        let n = ((b - a) / fine).floor() as usize;
        grid.extend((0..=n).map(|k| a + fine * k as f64));
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_monotone_grid() {
        let v = vec![Complex64::new(1.0, 0.0); 3];
        assert!(FrequencyResponse::new(vec![1.0, 1.0, 2.0], v, ResponseKind::Gain).is_err());
    }

    #[test]
    fn default_grid_is_densified_near_resonance() {
        let w = 2.0 * std::f64::consts::PI * 14e6;
        let lw = 2.0 * std::f64::consts::PI * 400.0;
        let g = default_grid(w, &[(w, lw)]);
        assert!(g.windows(2).all(|p| p[1] > p[0]));
        assert!((g[0] - 0.5 * w).abs() < 1e-6 && (g[g.len() - 1] - 1.5 * w).abs() < 1.0);
        let near = g.iter().filter(|&&x| (x - w).abs() <= 10.0 * lw).count();
        let coarse_step = w / 4095.0;
        assert!(near as f64 >= 8.0 * 20.0 * lw / coarse_step - 2.0);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(FrequencyResponse::from_csv("").is_err());
        assert!(FrequencyResponse::from_csv("# kind=gain units=N*s\nomega_rad_s,real,imag\n1,2\n").is_err());
        assert!(FrequencyResponse::from_csv("# kind=nope\nomega_rad_s,real,imag\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(points in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)) {
            let grid: Vec<f64> = (0..points.len()).map(|k| 1e6 + k as f64 * 17.5).collect();
            let values: Vec<Complex64> = points.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let r = FrequencyResponse::new(grid, values, ResponseKind::Susceptibility).unwrap();
            let back = FrequencyResponse::from_csv(&r.to_csv()).unwrap();
            prop_assert_eq!(r, back);
        }
    }
}
