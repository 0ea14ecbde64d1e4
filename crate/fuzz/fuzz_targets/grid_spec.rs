#![no_main]

use bfsmooth::config::GridSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = text.parse::<GridSpec>() {
        let pts = g.points();
        assert!(pts.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(g.to_string().parse::<GridSpec>().unwrap(), g);
    }
});
