#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::classification::ClassificationConfig;
use se2inv::experiments::InvarianceConfig;
use se2inv::mra::MraConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(v) = serde_json::from_slice::<serde_json::Value>(data) else { return };
    if let Ok(c) = serde_json::from_value::<MraConfig>(v.clone()) {
        let _ = c.validate();
    }
    if let Ok(c) = serde_json::from_value::<ClassificationConfig>(v.clone()) {
        let _ = c.validate();
    }
    let _ = serde_json::from_value::<InvarianceConfig>(v);
});
