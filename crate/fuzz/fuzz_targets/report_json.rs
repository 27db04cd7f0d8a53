#![no_main]

use libfuzzer_sys::fuzz_target;
use starsieve::harness::{emit_report, ReportFormat, RiskReport};

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = serde_json::from_slice::<RiskReport>(data) {
        let mut out = Vec::new();
        let _ = emit_report(&report, ReportFormat::Csv, &mut out);
    }
});
