#![no_main]

use dics_core::topology::TimeVaryingTopology;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(topology) = TimeVaryingTopology::from_json(text) {
        let again = TimeVaryingTopology::from_json(&topology.to_json()).expect("serialized topology parses");
        assert_eq!(topology, again);
    }
});
