#![no_main]

use libfuzzer_sys::fuzz_target;
use starsieve::adversary::StrategySpec;
use starsieve::classes::{ClassKind, DensityFamily, StarShapedClass};
use starsieve::rng::stream;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<StrategySpec>(data) else {
        return;
    };
    let m = spec.target.as_ref().map_or(8, |t| t.m()).min(64);
    let class = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, m).unwrap();
    let truth = class.star_center().clone();
    let _ = spec.resolve(&class, &truth, 0.1, 100, &mut stream(0, &[]));
});
