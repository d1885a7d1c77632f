#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(plan) = actf_core::timing::load_plan(text) {
            let _ = actf_core::timing::validate_plan(&plan);
        }
    }
});
