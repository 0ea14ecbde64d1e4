#![no_main]

use bfsmooth::io::ResultsFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = ResultsFile::from_json(text) {
        let _ = r.result.z_matrix();
        let _ = r.result.sigma_matrix();
        let _ = r.to_json();
    }
});
