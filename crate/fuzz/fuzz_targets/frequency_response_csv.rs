#![no_main]

use libfuzzer_sys::fuzz_target;
use optomech_core::response::FrequencyResponse;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = FrequencyResponse::from_csv(text) {
        let back = FrequencyResponse::from_csv(&r.to_csv()).expect("written response parses");
        assert_eq!(back.len(), r.len());
        assert_eq!(back.kind(), r.kind());
    }
});
