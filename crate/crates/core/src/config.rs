//! Flat `key = value` configuration files.
//!
//! ```text
//! # comment
//! wavelength_nm = 780
//! gamma_0_MHz = 19.217
//! mode.probe.omega_m_MHz = 28.6
//! feedback.enabled = true
//! ```
//!
//! One assignment per line; `#` starts a comment anywhere on a line. Keys
//! are case-sensitive and may appear only once. Frequencies are ordinary
//! frequencies (Hz multiples) and are converted to rad/s here and nowhere
//! else. Optical rates `gamma_0`, `gamma_in` and `delta_0` are amplitude
//! rates divided by 2π; the mechanical `gamma_m_kHz` is the full width of
//! the displacement spectrum. `coupling_g_GHz_per_nm` is g/2π.
//!
//! | key | unit |
//! |-----|------|
//! | `wavelength_nm` or `omega_laser_THz` | nm / THz |
//! | `gamma_0_MHz`, `gamma_in_MHz`, `delta_0_MHz` | MHz |
//! | `power_uW` | µW |
//! | `temperature_K` | K |
//! | `rng_seed`, `branch` | integer |
//! | `mode.<label>.mass_ug` | µg |
//! | `mode.<label>.gamma_m_kHz` | kHz |
//! | `mode.<label>.omega_m_MHz` | MHz |
//! | `mode.<label>.coupling_g_GHz_per_nm` | GHz/nm |
//! | `reference.freq_MHz`, `reference.depth_kHz` | MHz, kHz |
//! | `feedback.center_freq_MHz`, `feedback.bandwidth_MHz` | MHz |
//! | `feedback.sections`, `feedback.delay_samples` | integer |
//! | `feedback.phase_deg` | degrees |
//! | `feedback.gain_mag_Ns`, `feedback.gain_ceiling_Ns` | N·s |
//! | `feedback.enabled` | `true`/`false` |
//!
//! Other sections (`sim.`, `scenario.`) are read by their consumers through
//! the same [`Document`]; any key nobody reads is reported by
//! [`Document::finish`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{validate, Drive, Environment, MechanicalMode, OpticalMode, ReferenceTone, SystemConfig, ValidConfig};
use crate::signal_chain::FeedbackChainConfig;
use crate::units::{angular_to_hz, hz_to_angular, wavelength_to_angular, C_LIGHT};

/// Line number used for values supplied on the command line.
pub const OVERRIDE_LINE: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Document {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    used: Vec<bool>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|part| {
            !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

fn split_assignment(text: &str, line: usize) -> Result<(String, String)> {
    let (k, v) = text.split_once('=').ok_or_else(|| Error::Parse {
        line,
        message: format!("expected `key = value`, found {:?}", text.trim()),
    })?;
    let (k, v) = (k.trim(), v.trim());
    if !valid_key(k) {
        return Err(Error::Parse { line, message: format!("invalid key {k:?}") });
    }
    if v.is_empty() {
        return Err(Error::Parse { line, message: format!("missing value for {k}") });
    }
    Ok((k.to_string(), v.to_string()))
}

/// Parse a `key=value` command-line override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    split_assignment(text, OVERRIDE_LINE)
}

impl Document {
    pub fn parse(text: &str) -> Result<Document> {
        let mut doc = Document::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = split_assignment(content, line)?;
            if let Some(&prev) = doc.index.get(&key) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key} (first set on line {})", doc.entries[prev].line),
                });
            }
            doc.push(Entry { key, value, line });
        }
        Ok(doc)
    }

    fn push(&mut self, entry: Entry) {
        self.index.insert(entry.key.clone(), self.entries.len());
        self.entries.push(entry);
        self.used.push(false);
    }

    /// Replace or add a value; later calls win.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = split_assignment(&format!("{key}={value}"), OVERRIDE_LINE)?;
        match self.index.get(&key) {
            Some(&i) => {
                self.entries[i].value = value;
                self.entries[i].line = OVERRIDE_LINE;
            }
            None => self.push(Entry { key, value, line: OVERRIDE_LINE }),
        }
        Ok(())
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Mark `key` as consumed and return its entry.
    pub fn take(&mut self, key: &str) -> Option<Entry> {
        let &i = self.index.get(key)?;
        self.used[i] = true;
        Some(self.entries[i].clone())
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| Error::Parse {
                line: e.line,
                message: format!("{key}: cannot parse {:?}: {err}", e.value),
            }),
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Parse { line: OVERRIDE_LINE, message: format!("missing required key {key}") })
    }

    /// Comma-separated list of numbers.
    pub fn get_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.take(key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|err| Error::Parse {
                    line: e.line,
                    message: format!("{key}: cannot parse {s:?}: {err}"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Distinct `<label>` values among `prefix.<label>.*` keys, in order of
    /// first appearance.
    pub fn labels(&self, prefix: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if let Some(rest) = e.key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                if let Some((label, _)) = rest.split_once('.') {
                    if !out.iter().any(|l| l == label) {
                        out.push(label.to_string());
                    }
                }
            }
        }
        out
    }

    /// Error on the first key no consumer has read.
    pub fn finish(&self) -> Result<()> {
        match self.entries.iter().zip(&self.used).find(|(_, used)| !**used) {
            Some((e, _)) => Err(Error::Parse { line: e.line, message: format!("unknown key {}", e.key) }),
            None => Ok(()),
        }
    }

    /// Sorted `key = value` text, independent of file layout and comments.
    pub fn canonical(&self) -> String {
        let mut pairs: Vec<(&str, &str)> = self.entries.iter().map(|e| (e.key.as_str(), e.value.as_str())).collect();
        pairs.sort();
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn mhz(doc: &mut Document, key: &str) -> Result<f64> {
    Ok(hz_to_angular(doc.require::<f64>(key)? * 1e6))
}

/// Build and validate the physical system from a document, consuming its
/// system keys.
pub fn system_from_document(doc: &mut Document) -> Result<ValidConfig> {
    let wavelength: Option<f64> = doc.get("wavelength_nm")?;
    let laser_thz: Option<f64> = doc.get("omega_laser_THz")?;
    let omega_laser = match (wavelength, laser_thz) {
        (Some(nm), None) => wavelength_to_angular(nm * 1e-9),
        (None, Some(thz)) => hz_to_angular(thz * 1e12),
        (Some(_), Some(_)) => {
            return Err(Error::Parse {
                line: OVERRIDE_LINE,
                message: "set only one of wavelength_nm and omega_laser_THz".into(),
            })
        }
        (None, None) => {
            return Err(Error::Parse { line: OVERRIDE_LINE, message: "missing required key wavelength_nm".into() })
        }
    };
    let optical = OpticalMode {
        gamma_0: mhz(doc, "gamma_0_MHz")?,
        gamma_in: mhz(doc, "gamma_in_MHz")?,
        delta_0: mhz(doc, "delta_0_MHz")?,
        omega_laser,
    };

    let mut mechanics = Vec::new();
    for label in doc.labels("mode") {
        let p = |f: &str| format!("mode.{label}.{f}");
        mechanics.push(MechanicalMode {
            mass: doc.require::<f64>(&p("mass_ug"))? * 1e-9,
            gamma_m: hz_to_angular(doc.require::<f64>(&p("gamma_m_kHz"))? * 1e3),
            omega_m: hz_to_angular(doc.require::<f64>(&p("omega_m_MHz"))? * 1e6),
            coupling_g: hz_to_angular(doc.require::<f64>(&p("coupling_g_GHz_per_nm"))? * 1e18),
            label,
        });
    }

    let reference_tone = match (doc.get::<f64>("reference.freq_MHz")?, doc.get::<f64>("reference.depth_kHz")?) {
        (Some(f), Some(d)) => Some(ReferenceTone { omega: hz_to_angular(f * 1e6), depth: hz_to_angular(d * 1e3) }),
        (None, None) => None,
        _ => {
            return Err(Error::Parse {
                line: OVERRIDE_LINE,
                message: "reference.freq_MHz and reference.depth_kHz must be set together".into(),
            })
        }
    };
    let drive = Drive { power: doc.require::<f64>("power_uW")? * 1e-6, reference_tone };
    let environment = Environment { temperature: doc.require("temperature_K")? };

    let mut feedback = FeedbackChainConfig::default();
    if let Some(v) = doc.get::<f64>("feedback.center_freq_MHz")? {
        feedback.center_freq = hz_to_angular(v * 1e6);
    }
    if let Some(v) = doc.get::<f64>("feedback.bandwidth_MHz")? {
        feedback.bandwidth = hz_to_angular(v * 1e6);
    }
    if let Some(v) = doc.get("feedback.sections")? {
        feedback.sections = v;
    }
    if let Some(v) = doc.get("feedback.phase_deg")? {
        feedback.phase_deg = v;
    }
    if let Some(v) = doc.get("feedback.gain_mag_Ns")? {
        feedback.gain_mag = v;
    }
    if let Some(v) = doc.get("feedback.enabled")? {
        feedback.enabled = v;
    }
    if let Some(v) = doc.get("feedback.delay_samples")? {
        feedback.delay_samples = v;
    }
    if let Some(v) = doc.get("feedback.gain_ceiling_Ns")? {
        feedback.gain_ceiling = v;
    }

    validate(SystemConfig {
        optical,
        mechanics,
        drive,
        environment,
        feedback,
        rng_seed: doc.get("rng_seed")?.unwrap_or(0),
        branch: doc.get("branch")?,
    })
}

/// Parse a complete system-only configuration file; any extra key is an
/// error.
pub fn parse_system(text: &str) -> Result<ValidConfig> {
    let mut doc = Document::parse(text)?;
    let cfg = system_from_document(&mut doc)?;
    doc.finish()?;
    Ok(cfg)
}

/// Write a configuration in the file grammar. Values use the shortest
/// representation that parses back to the same unit-scaled number.
pub fn write_system(cfg: &SystemConfig) -> String {
    let mhz = |w: f64| angular_to_hz(w) / 1e6;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    let wavelength_nm = 2.0 * std::f64::consts::PI * C_LIGHT / cfg.optical.omega_laser * 1e9;
    kv("wavelength_nm", format!("{wavelength_nm:?}"));
    kv("gamma_0_MHz", format!("{:?}", mhz(cfg.optical.gamma_0)));
    kv("gamma_in_MHz", format!("{:?}", mhz(cfg.optical.gamma_in)));
    kv("delta_0_MHz", format!("{:?}", mhz(cfg.optical.delta_0)));
    kv("power_uW", format!("{:?}", cfg.drive.power * 1e6));
    kv("temperature_K", format!("{:?}", cfg.environment.temperature));
    kv("rng_seed", cfg.rng_seed.to_string());
    if let Some(b) = cfg.branch {
        kv("branch", b.to_string());
    }
    for m in &cfg.mechanics {
        let p = |f: &str| format!("mode.{}.{f}", m.label);
        kv(&p("mass_ug"), format!("{:?}", m.mass * 1e9));
        kv(&p("gamma_m_kHz"), format!("{:?}", angular_to_hz(m.gamma_m) / 1e3));
        kv(&p("omega_m_MHz"), format!("{:?}", mhz(m.omega_m)));
        kv(&p("coupling_g_GHz_per_nm"), format!("{:?}", angular_to_hz(m.coupling_g) / 1e18));
    }
    if let Some(t) = &cfg.drive.reference_tone {
        kv("reference.freq_MHz", format!("{:?}", mhz(t.omega)));
        kv("reference.depth_kHz", format!("{:?}", angular_to_hz(t.depth) / 1e3));
    }
    let f = &cfg.feedback;
    kv("feedback.center_freq_MHz", format!("{:?}", mhz(f.center_freq)));
    kv("feedback.bandwidth_MHz", format!("{:?}", mhz(f.bandwidth)));
    kv("feedback.sections", f.sections.to_string());
    kv("feedback.phase_deg", format!("{:?}", f.phase_deg));
    kv("feedback.gain_mag_Ns", format!("{:?}", f.gain_mag));
    kv("feedback.enabled", f.enabled.to_string());
    kv("feedback.delay_samples", f.delay_samples.to_string());
    kv("feedback.gain_ceiling_Ns", format!("{:?}", f.gain_ceiling));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    fn assert_close_config(a: &SystemConfig, b: &SystemConfig) {
        assert!(close(a.optical.gamma_0, b.optical.gamma_0));
        assert!(close(a.optical.gamma_in, b.optical.gamma_in));
        assert!(close(a.optical.delta_0, b.optical.delta_0));
        assert!(close(a.optical.omega_laser, b.optical.omega_laser));
        assert!(close(a.drive.power, b.drive.power));
        assert_eq!(a.mechanics.len(), b.mechanics.len());
        for (x, y) in a.mechanics.iter().zip(&b.mechanics) {
            assert_eq!(x.label, y.label);
            assert!(close(x.mass, y.mass) && close(x.gamma_m, y.gamma_m));
            assert!(close(x.omega_m, y.omega_m) && close(x.coupling_g, y.coupling_g));
        }
        assert!(close(a.feedback.center_freq, b.feedback.center_freq));
        assert_eq!(a.feedback.sections, b.feedback.sections);
        assert_eq!(a.rng_seed, b.rng_seed);
    }

    #[test]
    fn default_round_trips() {
        let cfg = defaults::paper_like();
        let text = write_system(&cfg);
        let back = parse_system(&text).unwrap();
        assert_close_config(&cfg, &back);
    }

    #[test]
    fn conversion_happens_at_ingestion() {
        let mut doc = Document::parse(&write_system(&defaults::paper_like())).unwrap();
        doc.set("mode.probe.omega_m_MHz", "1").unwrap();
        let cfg = system_from_document(&mut doc).unwrap();
        assert_eq!(cfg.mode("probe").unwrap().1.omega_m, 2.0 * std::f64::consts::PI * 1e6);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Document::parse("a = 1\n\nb 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = Document::parse("a = 1\n# c\na = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let text = write_system(&defaults::paper_like()) + "bogus_key = 3\n";
        let n = text.lines().count();
        match parse_system(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, n);
                assert!(message.contains("bogus_key"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut d = Document::parse("# header\n  x = 1.5  # trailing\n\n").unwrap();
        assert_eq!(d.get::<f64>("x").unwrap(), Some(1.5));
        d.finish().unwrap();
    }

    #[test]
    fn overrides_replace_values() {
        let text = write_system(&defaults::paper_like());
        let mut doc = Document::parse(&text).unwrap();
        let (k, v) = parse_override("power_uW=42").unwrap();
        doc.set(&k, &v).unwrap();
        let cfg = system_from_document(&mut doc).unwrap();
        assert!(close(cfg.drive.power, 42e-6));
        assert!(parse_override("power_uW").is_err());
        assert!(parse_override("=3").is_err());
    }

    #[test]
    fn bad_value_reports_line() {
        let text = write_system(&defaults::paper_like()) + "temperature_K = warm\n";
        let text = text.replacen("temperature_K = ", "# was: ", 1);
        match parse_system(&text) {
            Err(Error::Parse { line, .. }) => assert!(line > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors_pass_through() {
        let mut doc = Document::parse(&write_system(&defaults::paper_like())).unwrap();
        doc.set("mode.probe.mass_ug", "0").unwrap();
        assert!(matches!(system_from_document(&mut doc), Err(Error::Validation(_))));
    }

    #[test]
    fn canonical_ignores_layout() {
        let a = Document::parse("b = 2\na = 1 # x\n").unwrap();
        let b = Document::parse("\n# y\na=1\nb= 2").unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }

    proptest! {
        #[test]
        fn parser_never_panics(text in "\\PC*") {
            let _ = Document::parse(&text);
            let _ = parse_system(&text);
        }

        #[test]
        fn written_configs_reparse(power in 0.0f64..1e4, temp in 0.0f64..1e3, seed in any::<u64>()) {
            let cfg = defaults::paper_like()
                .with(|c| { c.drive.power = power * 1e-6; c.environment.temperature = temp; c.rng_seed = seed; })
                .unwrap();
            let back = parse_system(&write_system(&cfg)).unwrap();
            prop_assert!(close(back.drive.power, cfg.drive.power) || cfg.drive.power == 0.0);
            prop_assert_eq!(back.rng_seed, seed);
        }
    }
}
