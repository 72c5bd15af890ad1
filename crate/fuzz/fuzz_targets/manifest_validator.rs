#![no_main]

use libfuzzer_sys::fuzz_target;
use optomech_cli::manifest::validate;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = validate(text) {
        validate(&m.to_json()).expect("a valid manifest stays valid when rewritten");
    }
});
