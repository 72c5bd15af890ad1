//! Run manifest: what was run, with which inputs, and what it wrote.
//!
//! The JSON layout is described by `schema/manifest.schema.json`;
//! [`validate`] applies the same rules without a schema engine, and also
//! requires status, exit code and error record to agree.

use serde::{Deserialize, Serialize};

use crate::error::{RunError, EXIT_ASSERTION, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};
use crate::output::FileRecord;

pub const SCHEMA_ID: &str = "optomech-manifest/1";
pub const TOOL: &str = "optomech-sim";
pub const SCHEMA_JSON: &str = include_str!("../schema/manifest.schema.json");
pub const SCENARIOS: [&str; 6] = ["analyze", "threshold", "simulate", "sweep", "calibrate", "suppress"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&RunError> for ErrorRecord {
    fn from(e: &RunError) -> Self {
        ErrorRecord { kind: e.kind().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub tool: String,
    pub tool_version: String,
    pub scenario: String,
    /// SHA-256 of the canonical config text with the seed removed.
    pub config_hash: String,
    pub seed: u64,
    pub overrides: Vec<Override>,
    pub wall_time_s: f64,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<ErrorRecord>,
    pub checks: Vec<Check>,
    pub files: Vec<FileRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

fn is_sha256(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Check a manifest document against the schema rules. Returns every
/// violation found.
pub fn validate(text: &str) -> Result<Manifest, Vec<String>> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| vec![e.to_string()])?;
    let mut bad = Vec::new();
    let mut need = |ok: bool, msg: String| {
        if !ok {
            bad.push(msg);
        }
    };
    need(m.schema == SCHEMA_ID, format!("schema must be {SCHEMA_ID:?}"));
    need(m.tool == TOOL, format!("tool must be {TOOL:?}"));
    need(!m.tool_version.is_empty(), "tool_version is empty".into());
    need(SCENARIOS.contains(&m.scenario.as_str()), format!("unknown scenario {:?}", m.scenario));
    need(is_sha256(&m.config_hash), "config_hash is not a lowercase SHA-256".into());
    need(m.wall_time_s.is_finite() && m.wall_time_s >= 0.0, "wall_time_s must be non-negative".into());
    need(
        [EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERTION].contains(&m.exit_code),
        format!("exit_code {} is not a documented code", m.exit_code),
    );
    match m.status.as_str() {
        "ok" => {}
        "failed" => {}
        s => need(false, format!("status {s:?} is neither ok nor failed")),
    }
    need((m.status == "ok") == (m.exit_code == EXIT_OK), "status and exit_code disagree".into());
    need(m.error.is_none() == (m.exit_code == EXIT_OK), "error record and exit_code disagree".into());
    for o in &m.overrides {
        need(!o.key.is_empty(), "override with empty key".into());
    }
    if let Some(e) = &m.error {
        need(["config", "numeric", "assertion"].contains(&e.kind.as_str()), format!("unknown error kind {:?}", e.kind));
    }
    for c in &m.checks {
        need(!c.name.is_empty(), "check with empty name".into());
    }
    for f in &m.files {
        need(!f.path.is_empty(), "file with empty path".into());
        need(is_sha256(&f.sha256), format!("{}: sha256 is not a lowercase SHA-256", f.path));
    }
    if bad.is_empty() {
        Ok(m)
    } else {
        Err(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_file_is_json_and_names_every_field() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA_JSON).unwrap();
        let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        let sample = Manifest {
            schema: SCHEMA_ID.into(),
            tool: TOOL.into(),
            tool_version: "0".into(),
            scenario: "analyze".into(),
            config_hash: "0".repeat(64),
            seed: 0,
            overrides: vec![],
            wall_time_s: 0.0,
            status: "ok".into(),
            exit_code: 0,
            error: None,
            checks: vec![],
            files: vec![],
        };
        let value = serde_json::to_value(&sample).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut req = required.clone();
        req.sort_unstable();
        assert_eq!(keys, req);
        assert!(validate(&sample.to_json()).is_ok());
    }
}
