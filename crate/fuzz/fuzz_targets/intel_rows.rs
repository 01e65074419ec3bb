#![no_main]

use libfuzzer_sys::fuzz_target;
use wsn_gsp::dataset::{parse_intel_str, IntelFilter};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let filter = IntelFilter::default();
    let (records, report) = parse_intel_str(&text, &filter);
    assert_eq!(records.len(), report.accepted);
    assert_eq!(report.accepted + report.rejected(), report.rows);
    // Accepted rows must survive a write/read cycle.
    let lines: String = records.iter().map(|r| r.to_line() + "\n").collect();
    let (again, _) = parse_intel_str(&lines, &filter);
    assert_eq!(again.len(), records.len());
});
