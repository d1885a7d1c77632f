#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(j) = actf_core::experiment::parse_journal(text) {
            assert!(j.complete_len <= text.len());
        }
    }
});
