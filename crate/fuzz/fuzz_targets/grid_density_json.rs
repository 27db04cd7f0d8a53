#![no_main]

use libfuzzer_sys::fuzz_target;
use starsieve::density::GridDensity;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = serde_json::from_slice::<GridDensity>(data) {
        assert!(f.m() >= 1);
        assert!(f.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        let text = serde_json::to_string(&f).unwrap();
        let back: GridDensity = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }
});
