#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(net) = actf_core::network::load_network(text) {
            // A loaded network must survive its own serializer.
            let again = actf_core::network::load_network(&net.to_json()).expect("round trip");
            assert_eq!(net, again);
        }
    }
});
