#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::image::ImageGrid;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageGrid::from_bytes(data) {
        assert_eq!(img.to_bytes(), data);
    }
});
