#![no_main]

use dics_core::objectives::NodeData;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(node) = NodeData::from_csv(text) {
        let again = NodeData::from_csv(&node.to_csv()).expect("written dataset parses");
        assert_eq!(node.sample_count(), again.sample_count());
        assert_eq!(node.dim(), again.dim());
    }
});
