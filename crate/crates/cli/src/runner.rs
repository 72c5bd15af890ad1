//! One CLI invocation: load, run, write the manifest.

use std::path::PathBuf;
use std::time::Instant;

use optomech_core::config::parse_override;

use crate::error::{RunError, RunResult, EXIT_OK};
use crate::manifest::{ErrorRecord, Manifest, Override, SCHEMA_ID, TOOL};
use crate::output::{sha256_hex, FileKind, Outputs};
use crate::scenarios::{Run, Scenario};
use crate::settings::Settings;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone)]
pub struct Invocation {
    pub scenario: Scenario,
    pub config: PathBuf,
    /// Raw `key=value` strings.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub workers: usize,
}

/// What a finished invocation produced.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub error: Option<RunError>,
    /// `None` when the output directory could not be used.
    pub manifest: Option<Manifest>,
}

fn parse_overrides(raw: &[String]) -> RunResult<Vec<(String, String)>> {
    raw.iter().map(|o| parse_override(o).map_err(|e| RunError::Config(format!("--set {o:?}: {e}")))).collect()
}

pub fn run(inv: &Invocation) -> Outcome {
    let start = Instant::now();
    let text = std::fs::read_to_string(&inv.config);
    // identity of the run even when the config does not load
    let fallback_hash = sha256_hex(text.as_deref().unwrap_or("").as_bytes());
    let overrides = parse_overrides(&inv.overrides);
    let settings = match (&text, &overrides) {
        (Ok(t), Ok(o)) => Settings::load(t, o, inv.seed),
        (Err(e), _) => Err(RunError::Config(format!("cannot read {}: {e}", inv.config.display()))),
        (_, Err(e)) => Err(RunError::Config(e.to_string())),
    };
    let mut out = match Outputs::create(&inv.out) {
        Ok(o) => o,
        Err(e) => return Outcome { exit_code: e.exit_code(), error: Some(e), manifest: None },
    };

    let mut checks = Vec::new();
    let result = match &settings {
        Ok(s) => {
            let mut r = Run { settings: s, out: &mut out, checks: Vec::new(), workers: inv.workers };
            let res = r.execute(inv.scenario);
            checks = r.checks;
            res
        }
        Err(e) => Err(e.clone()),
    };
    let error = result.err();
    if let Some(e) = &error {
        log::error!("{e}");
        if !matches!(e, RunError::Assertion(_)) {
            out.mark_partial();
        }
        if let Err(w) = out.write_json(ERROR_FILE, FileKind::Report, &ErrorRecord::from(e)) {
            log::error!("could not write {ERROR_FILE}: {w}");
        }
    }
    let exit_code = error.as_ref().map_or(EXIT_OK, RunError::exit_code);
    let (config_hash, seed) = match &settings {
        Ok(s) => (sha256_hex(s.canonical.as_bytes()), s.seed),
        Err(_) => (fallback_hash, inv.seed.unwrap_or(0)),
    };
    let manifest = Manifest {
        schema: SCHEMA_ID.into(),
        tool: TOOL.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: inv.scenario.name().into(),
        config_hash,
        seed,
        overrides: overrides
            .unwrap_or_default()
            .into_iter()
            .map(|(key, value)| Override { key, value })
            .collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
        status: if error.is_none() { "ok" } else { "failed" }.into(),
        exit_code,
        error: error.as_ref().map(ErrorRecord::from),
        checks,
        files: Vec::new(),
    };
    let dir = out.dir().to_path_buf();
    let manifest = Manifest { files: out.into_records(), ..manifest };
    if let Err(e) = std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json()) {
        log::error!("could not write {MANIFEST_FILE}: {e}");
    }
    Outcome { exit_code, error, manifest: Some(manifest) }
}
