//! Files written by a run, and the sweep table format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use optomech_core::spectral::Spectrum;

use crate::error::{RunError, RunResult};
use crate::experiments::SweepRow;

/// Whether a file depends on the random seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    /// Closed-form or deterministic output; identical for every seed.
    Analysis,
    /// Simulated trajectories and anything measured from them.
    Stochastic,
    /// Run summaries mixing both.
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub kind: FileKind,
    /// Written by a run that later failed.
    pub partial: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory plus the record of everything written into it.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl Outputs {
    pub fn create(dir: &Path) -> RunResult<Outputs> {
        fs::create_dir_all(dir).map_err(|e| RunError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let probe = dir.join(".write-test");
        fs::write(&probe, b"").map_err(|e| RunError::Config(format!("{} is not writable: {e}", dir.display())))?;
        let _ = fs::remove_file(probe);
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, kind: FileKind, bytes: &[u8]) -> RunResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
            kind,
            partial: false,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, kind: FileKind, value: &T) -> RunResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Numeric(e.to_string()))?;
        text.push('\n');
        self.write(name, kind, text.as_bytes())
    }

    /// Flag everything written so far as belonging to a failed run.
    pub fn mark_partial(&mut self) {
        for f in &mut self.files {
            f.partial = true;
        }
    }

    pub fn into_records(mut self) -> Vec<FileRecord> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files
    }
}

pub const SWEEP_HEADER: &str = "power_W,feedback_on,snr_db,sensitivity_m_rtHz,gamma_eff_rad_s,unstable";

/// SNR-versus-power table, sorted by power then feedback flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn new(mut rows: Vec<SweepRow>) -> RunResult<SweepResult> {
        rows.sort_by(|a, b| a.power_w.total_cmp(&b.power_w).then(a.feedback_on.cmp(&b.feedback_on)));
        if let Some(w) = rows.windows(2).find(|w| w[0].power_w == w[1].power_w && w[0].feedback_on == w[1].feedback_on) {
            return Err(RunError::Numeric(format!("duplicate sweep point at {} W", w[0].power_w)));
        }
        if rows.iter().any(|r| !(r.power_w.is_finite() && r.power_w >= 0.0)) {
            return Err(RunError::Numeric("sweep power must be finite and non-negative".into()));
        }
        Ok(SweepResult { rows })
    }

    pub fn rows(&self) -> &[SweepRow] {
        &self.rows
    }

    /// Rows with the given feedback flag, in power order.
    pub fn series(&self, feedback_on: bool) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.feedback_on == feedback_on)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:e},{},{:e},{:e},{:e},{}",
                r.power_w, r.feedback_on, r.snr_db, r.sensitivity_m_rthz, r.gamma_eff_rad_s, r.unstable
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> RunResult<SweepResult> {
        let bad = |line: usize, what: &str| RunError::Config(format!("sweep table line {line}: {what}"));
        let mut lines = text.lines();
        if lines.next() != Some(SWEEP_HEADER) {
            return Err(bad(1, "unexpected header"));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let n = k + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(n, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
            let flag = |s: &str| s.parse::<bool>().map_err(|_| bad(n, "bad flag"));
            rows.push(SweepRow {
                power_w: num(f[0])?,
                feedback_on: flag(f[1])?,
                snr_db: num(f[2])?,
                sensitivity_m_rthz: num(f[3])?,
                gamma_eff_rad_s: num(f[4])?,
                unstable: flag(f[5])?,
            });
        }
        let result = SweepResult::new(rows.clone()).map_err(|e| RunError::Config(e.to_string()))?;
        let key = |r: &SweepRow| (r.power_w.to_bits(), r.feedback_on);
        if !result.rows.iter().map(key).eq(rows.iter().map(key)) {
            return Err(RunError::Config("sweep table rows are not sorted by power then feedback flag".into()));
        }
        Ok(result)
    }
}

/// Long-format color map: one row per (power, feedback, frequency) up to
/// `max_hz`.
pub fn spectrogram_csv(points: &[(f64, bool, &Spectrum)], max_hz: f64) -> String {
    let mut s = String::from("power_W,feedback_on,freq_Hz,psd\n");
    for (p, on, spec) in points {
        for (k, v) in spec.psd.iter().enumerate() {
            let f = spec.freq(k);
            if f > max_hz {
                break;
            }
            let _ = writeln!(s, "{p:e},{on},{f:e},{v:e}");
        }
    }
    s
}
