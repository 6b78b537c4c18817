#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::bispectrum::BispectrumVector;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = BispectrumVector::from_bytes(data) {
        assert_eq!(b.to_bytes(), data);
    }
});
