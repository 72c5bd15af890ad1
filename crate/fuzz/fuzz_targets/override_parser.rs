#![no_main]

use libfuzzer_sys::fuzz_target;
use optomech_core::config::{parse_override, Document};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((k, v)) = parse_override(text) {
        let mut doc = Document::parse("").unwrap();
        doc.set(&k, &v).expect("parsed override applies");
        assert!(doc.contains(&k));
    }
});
