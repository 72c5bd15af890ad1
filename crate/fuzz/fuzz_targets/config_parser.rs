#![no_main]

use libfuzzer_sys::fuzz_target;
use optomech_cli::settings::Settings;
use optomech_core::config::{parse_system, write_system};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // a system that parses must survive a write/parse round trip
    if let Ok(cfg) = parse_system(text) {
        let again = parse_system(&write_system(&cfg)).expect("written config parses");
        assert_eq!(again.rng_seed, cfg.rng_seed);
        let labels = |c: &optomech_core::model::ValidConfig| c.mechanics.iter().map(|m| m.label.clone()).collect::<Vec<_>>();
        assert_eq!(labels(&again), labels(&cfg));
    }
    let _ = Settings::load(text, &[], None);
});
