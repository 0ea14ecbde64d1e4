#![no_main]

use bfsmooth::io::{dataset_from_json, dataset_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = dataset_from_json(text) {
        // anything accepted must survive a round trip unchanged
        let again = dataset_from_json(&dataset_to_json(&ds).unwrap()).unwrap();
        assert_eq!(again, ds);
    }
});
