#![no_main]

use libfuzzer_sys::fuzz_target;
use starsieve::tree::SieveTree;

fuzz_target!(|data: &[u8]| {
    if let Ok(tree) = serde_json::from_slice::<SieveTree>(data) {
        // Deserialization validates the structure, so traversal helpers
        // must not panic.
        let _ = tree.root();
        let _ = tree.level_sizes();
        let _ = tree.truncated(1);
    }
});
