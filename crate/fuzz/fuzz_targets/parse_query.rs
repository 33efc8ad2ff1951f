#![no_main]

use libfuzzer_sys::fuzz_target;
use streamq::querylang::parse_query;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Anything that parses must render to text that parses back to itself.
    if let Ok(spec) = parse_query(text) {
        let again = parse_query(&spec.render()).expect("rendered query parses");
        assert_eq!(spec, again);
    }
});
