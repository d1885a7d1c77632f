#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(design) = actf_core::design::load_design(text) {
            let mut out = Vec::new();
            design.write_csv(&mut out).expect("write to memory");
        }
    }
});
