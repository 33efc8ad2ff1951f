#![no_main]

use libfuzzer_sys::fuzz_target;
use streamq::harness::DatasetReader;

fuzz_target!(|data: &[u8]| {
    let Ok(reader) = DatasetReader::new(data) else {
        return;
    };
    for record in reader {
        match record {
            Ok(r) => assert!((0.0..=1.0).contains(&r.proxy)),
            Err(_) => break,
        }
    }
});
