//! Trajectory files.
//!
//! Binary layout: a text header terminated by a line `end`, then every
//! channel as a contiguous block of little-endian f64 values in the order
//! the `channels` line lists them.
//!
//! ```text
//! optomech-trajectory 1
//! t0=8.3e-9 dt=8.3e-11 decimation=52 seed=7 samples=1000 n_bar=1.3e6 i_bar=2.1e14
//! mode label=probe omega=1.79e8 gamma=5.65e5 mass=3e-10 x_bar=1e-16 thermal_variance=4.2e-28 moments=10,0,1
//! channels x:probe,v:probe,field_re,field_im,photocurrent,force
//! units m,m/s,sqrt(photons),sqrt(photons),1/s,N
//! end
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use num_complex::Complex64;

use super::{ModeInfo, Moments, Trajectory};
use crate::error::{Error, Result};

const MAGIC: &str = "optomech-trajectory 1";
/// Upper bound on decoded samples, against hostile headers.
const MAX_VALUES: usize = 1 << 28;

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.chars().any(|c| c.is_whitespace() || c == ',' || c == '=' || c == ':') {
        return Err(Error::Format(format!("mode label {label:?} cannot be stored")));
    }
    Ok(())
}

fn channels(traj: &Trajectory) -> Vec<(String, &'static str, Vec<f64>)> {
    let mut out = Vec::new();
    for (m, x) in traj.modes.iter().zip(&traj.x) {
        out.push((format!("x:{}", m.label), "m", x.clone()));
    }
    for (m, v) in traj.modes.iter().zip(&traj.v) {
        out.push((format!("v:{}", m.label), "m/s", v.clone()));
    }
    if !traj.field.is_empty() {
        out.push(("field_re".into(), "sqrt(photons)", traj.field.iter().map(|a| a.re).collect()));
        out.push(("field_im".into(), "sqrt(photons)", traj.field.iter().map(|a| a.im).collect()));
    }
    if !traj.photocurrent.is_empty() {
        out.push(("photocurrent".into(), "1/s", traj.photocurrent.clone()));
    }
    if !traj.force.is_empty() {
        out.push(("force".into(), "N", traj.force.clone()));
    }
    out
}

pub fn write_binary<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    traj.check()?;
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}");
    let _ = writeln!(
        h,
        "t0={:e} dt={:e} decimation={} seed={} samples={} n_bar={:e} i_bar={:e}",
        traj.t0,
        traj.dt,
        traj.decimation,
        traj.seed,
        traj.len(),
        traj.n_bar,
        traj.i_bar
    );
    for (m, mo) in traj.modes.iter().zip(&traj.moments) {
        check_label(&m.label)?;
        let _ = writeln!(
            h,
            "mode label={} omega={:e} gamma={:e} mass={:e} x_bar={:e} thermal_variance={:e} moments={},{:e},{:e}",
            m.label, m.omega_m, m.gamma_m, m.mass, m.x_bar, m.thermal_variance, mo.count, mo.sum, mo.sum_sq
        );
    }
    let ch = channels(traj);
    let _ = writeln!(h, "channels {}", ch.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join(","));
    let _ = writeln!(h, "units {}", ch.iter().map(|c| c.1).collect::<Vec<_>>().join(","));
    h.push_str("end\n");
    out.write_all(h.as_bytes())?;
    let mut buf = Vec::with_capacity(8 * traj.len());
    for (_, _, values) in &ch {
        buf.clear();
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn fields(line: &str) -> impl Iterator<Item = Result<(&str, &str)>> {
    line.split_whitespace().map(|kv| kv.split_once('=').ok_or_else(|| Error::Format(format!("expected key=value, got {kv:?}"))))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::Format(format!("{key}: {e}")))
}

pub fn read_binary<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String> {
        line.clear();
        let n = r.by_ref().take(1 << 16).read_line(&mut line)?;
        if n == 0 || !line.ends_with('\n') {
            return Err(Error::Format("truncated header".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != MAGIC {
        return Err(Error::Format("not a trajectory file".into()));
    }
    let top = next_line(&mut r)?;
    let (mut t0, mut dt, mut dec, mut seed, mut samples, mut n_bar, mut i_bar) = (None, None, None, None, None, None, None);
    for kv in fields(&top) {
        let (k, v) = kv?;
        match k {
            "t0" => t0 = Some(num::<f64>(k, v)?),
            "dt" => dt = Some(num::<f64>(k, v)?),
            "decimation" => dec = Some(num::<usize>(k, v)?),
            "seed" => seed = Some(num::<u64>(k, v)?),
            "samples" => samples = Some(num::<usize>(k, v)?),
            "n_bar" => n_bar = Some(num::<f64>(k, v)?),
            "i_bar" => i_bar = Some(num::<f64>(k, v)?),
            _ => return Err(Error::Format(format!("unknown header key {k:?}"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("header lacks {k}"));
    let (t0, dt, dec, seed, samples) = (
        t0.ok_or_else(|| missing("t0"))?,
        dt.ok_or_else(|| missing("dt"))?,
        dec.ok_or_else(|| missing("decimation"))?,
        seed.ok_or_else(|| missing("seed"))?,
        samples.ok_or_else(|| missing("samples"))?,
    );
    if !(dt > 0.0 && dt.is_finite() && t0.is_finite()) || dec == 0 {
        return Err(Error::Format("time base must be finite with positive step".into()));
    }

    let mut modes = Vec::new();
    let mut moments = Vec::new();
    let channel_line = loop {
        let l = next_line(&mut r)?;
        let Some(rest) = l.strip_prefix("mode ") else { break l };
        let mut m = ModeInfo { label: String::new(), omega_m: 0.0, gamma_m: 0.0, mass: 0.0, x_bar: 0.0, thermal_variance: 0.0 };
        let mut mo = Moments::default();
        for kv in fields(rest) {
            let (k, v) = kv?;
            match k {
                "label" => {
                    check_label(v)?;
                    m.label = v.to_string()
                }
                "omega" => m.omega_m = num(k, v)?,
                "gamma" => m.gamma_m = num(k, v)?,
                "mass" => m.mass = num(k, v)?,
                "x_bar" => m.x_bar = num(k, v)?,
                "thermal_variance" => m.thermal_variance = num(k, v)?,
                "moments" => {
                    let parts: Vec<&str> = v.split(',').collect();
                    if parts.len() != 3 {
                        return Err(Error::Format("moments needs three values".into()));
                    }
                    mo = Moments { count: num(k, parts[0])?, sum: num(k, parts[1])?, sum_sq: num(k, parts[2])? };
                }
                _ => return Err(Error::Format(format!("unknown mode key {k:?}"))),
            }
        }
        if m.label.is_empty() {
            return Err(Error::Format("mode without label".into()));
        }
        if modes.iter().any(|x: &ModeInfo| x.label == m.label) {
            return Err(Error::Format(format!("duplicate mode {}", m.label)));
        }
        modes.push(m);
        moments.push(mo);
    };
    let names: Vec<String> = channel_line
        .strip_prefix("channels")
        .ok_or_else(|| Error::Format("missing channels line".into()))?
        .trim()
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let units_line = next_line(&mut r)?;
    let units: Vec<&str> = units_line
        .strip_prefix("units")
        .ok_or_else(|| Error::Format("missing units line".into()))?
        .trim()
        .split(',')
        .filter(|s| !s.is_empty())
        .collect();
    if units.len() != names.len() {
        return Err(Error::Format("units and channels differ in count".into()));
    }
    if next_line(&mut r)? != "end" {
        return Err(Error::Format("header not terminated by end".into()));
    }
    if samples > MAX_VALUES || names.len().checked_mul(samples).is_none_or(|v| v > MAX_VALUES) {
        return Err(Error::Format("trajectory too large".into()));
    }

    let mut traj = Trajectory {
        t0,
        dt,
        decimation: dec,
        seed,
        x: Vec::new(),
        v: Vec::new(),
        field: Vec::new(),
        photocurrent: Vec::new(),
        force: Vec::new(),
        moments,
        n_bar: n_bar.unwrap_or(f64::NAN),
        i_bar: i_bar.unwrap_or(f64::NAN),
        modes,
    };
    let mut re: Option<Vec<f64>> = None;
    let mut im: Option<Vec<f64>> = None;
    let mut seen = std::collections::HashSet::new();
    let mut raw = Vec::new();
    for name in &names {
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate channel {name}")));
        }
        // grows with the data actually present, so a lying header cannot
        // force a large allocation
        raw.clear();
        r.by_ref().take(8 * samples as u64).read_to_end(&mut raw)?;
        if raw.len() != 8 * samples {
            return Err(Error::Format(format!("channel {name} truncated")));
        }
        let values: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let by_label = |prefix: &str| -> Option<usize> {
            name.strip_prefix(prefix).and_then(|l| traj.modes.iter().position(|m| m.label == l))
        };
        if let Some(j) = by_label("x:") {
            if traj.x.len() != j {
                return Err(Error::Format("position channels out of mode order".into()));
            }
            traj.x.push(values);
        } else if let Some(j) = by_label("v:") {
            if traj.v.len() != j {
                return Err(Error::Format("velocity channels out of mode order".into()));
            }
            traj.v.push(values);
        } else {
            match name.as_str() {
                "field_re" => re = Some(values),
                "field_im" => im = Some(values),
                "photocurrent" => traj.photocurrent = values,
                "force" => traj.force = values,
                _ => return Err(Error::Format(format!("unknown channel {name:?}"))),
            }
        }
    }
    for (series, what) in [(&traj.x, "position"), (&traj.v, "velocity")] {
        if !series.is_empty() && series.len() != traj.modes.len() {
            return Err(Error::Format(format!("{what} channels missing for some modes")));
        }
    }
    match (re, im) {
        (Some(a), Some(b)) => traj.field = a.into_iter().zip(b).map(|(x, y)| Complex64::new(x, y)).collect(),
        (None, None) => {}
        _ => return Err(Error::Format("field needs both real and imaginary parts".into())),
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after data".into()));
    }
    traj.check()?;
    Ok(traj)
}

/// Plain CSV, one row per record.
pub fn write_csv<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    let ch = channels(traj);
    let mut header = String::from("t_s");
    for (name, unit, _) in &ch {
        let _ = write!(header, ",{name}[{unit}]");
    }
    writeln!(out, "{header}")?;
    let mut row = String::new();
    for k in 0..traj.len() {
        row.clear();
        let _ = write!(row, "{:e}", traj.time(k));
        for (_, _, values) in &ch {
            let _ = write!(row, ",{:e}", values[k]);
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
