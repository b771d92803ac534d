#![no_main]

use dics_core::harness::csv::{read_csv, trace_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = read_csv(text) {
        // NaN fields parse but never compare equal, so only the shape is checked
        let again = read_csv(&trace_csv(&records)).expect("written trace parses");
        assert_eq!(records.len(), again.len());
    }
});
