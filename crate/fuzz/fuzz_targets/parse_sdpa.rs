#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = invforge::sdp::parse_sdpa(text) {
            let _ = p.to_problem();
        }
    }
});
