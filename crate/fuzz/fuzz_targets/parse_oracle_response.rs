#![no_main]

use libfuzzer_sys::fuzz_target;
use streamq::oracle::parse_oracle_response;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(outcome) = parse_oracle_response(line) {
            assert!(outcome.stat.is_finite());
        }
    }
});
