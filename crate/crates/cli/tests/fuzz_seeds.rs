//! The checked-in fuzz seeds are valid inputs for their targets.

use std::fs;
use std::path::{Path, PathBuf};

use optomech_cli::manifest::validate;
use optomech_cli::settings::Settings;
use optomech_core::config::{parse_override, parse_system};
use optomech_core::response::FrequencyResponse;
use optomech_core::sim::read_binary;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds for {target}");
    v
}

fn text(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn seeds_are_accepted() {
    for p in seeds("config_parser") {
        parse_system(&text(&p)).map(|_| ()).or_else(|_| Settings::load(&text(&p), &[], None).map(|_| ())).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for p in seeds("override_parser") {
        parse_override(&text(&p)).unwrap();
    }
    for p in seeds("trajectory_decoder") {
        let t = read_binary(fs::read(&p).unwrap().as_slice()).unwrap();
        assert!(!t.is_empty());
    }
    for p in seeds("frequency_response_csv") {
        FrequencyResponse::from_csv(&text(&p)).unwrap();
    }
    for p in seeds("manifest_validator") {
        validate(&text(&p)).unwrap_or_else(|e| panic!("{}: {e:?}", p.display()));
    }
}
