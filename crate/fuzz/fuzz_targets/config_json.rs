#![no_main]

use bfsmooth::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let _ = cfg.validate();
        let back = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&back).unwrap(), cfg);
    }
});
