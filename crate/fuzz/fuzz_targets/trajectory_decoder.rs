#![no_main]

use libfuzzer_sys::fuzz_target;
use optomech_core::sim::{read_binary, write_binary};

fuzz_target!(|data: &[u8]| {
    // anything that decodes re-encodes to something that decodes the same
    if let Ok(traj) = read_binary(data) {
        let mut buf = Vec::new();
        write_binary(&traj, &mut buf).unwrap();
        let again = read_binary(buf.as_slice()).unwrap();
        assert_eq!(again.len(), traj.len());
        assert_eq!(again.modes.len(), traj.modes.len());
    }
});
