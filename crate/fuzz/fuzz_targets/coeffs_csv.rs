#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::harmonics::ShCoefficients;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ShCoefficients::from_csv(text) {
        let again = ShCoefficients::from_csv(&c.to_csv()).expect("re-parse own output");
        assert_eq!(c, again);
    }
});
