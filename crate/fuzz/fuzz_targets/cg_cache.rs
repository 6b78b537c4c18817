#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::clebsch_gordan::CgTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = CgTable::from_bytes(data) {
        assert_eq!(t.to_bytes(), data);
    }
});
