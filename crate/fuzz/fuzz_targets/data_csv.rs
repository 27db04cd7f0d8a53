#![no_main]

use libfuzzer_sys::fuzz_target;
use starsieve::harness::parse_data;
use starsieve::tournament::Sample;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = parse_data(data) {
        let _ = Sample::new(points, 0.0);
    }
});
