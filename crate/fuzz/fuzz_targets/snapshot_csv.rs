#![no_main]

use libfuzzer_sys::fuzz_target;
use wsn_gsp::dataset::SnapshotWindow;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = SnapshotWindow::from_csv(text) {
        let csv = w.to_csv();
        let again = SnapshotWindow::from_csv(&csv).unwrap();
        assert_eq!(again.to_csv(), csv);
    }
});
