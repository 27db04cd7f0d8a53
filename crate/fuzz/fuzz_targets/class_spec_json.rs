#![no_main]

use libfuzzer_sys::fuzz_target;
use starsieve::classes::{ClassSpec, DensityFamily, StarShapedClass};

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<ClassSpec>(data) else {
        return;
    };
    if let Ok(class) = StarShapedClass::from_spec(&spec) {
        assert_eq!(class.spec(), spec);
        // The star center is always a member.
        assert!(class.contains(class.star_center()).unwrap());
    }
});
